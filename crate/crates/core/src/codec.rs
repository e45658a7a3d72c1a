//! Little-endian framing helpers for the checkpoint and dataset formats.

use crate::error::FormatError;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn len_u64(&mut self) -> Result<usize, FormatError> {
        usize::try_from(self.u64()?).map_err(|_| FormatError::Truncated)
    }
}

/// Checks magic and version, the parts that must be rejected before any
/// length field is trusted.
pub(crate) fn check_preamble(bytes: &[u8], magic: [u8; 4], version: u32) -> Result<(), FormatError> {
    let mut r = Reader::new(bytes);
    let found: [u8; 4] = r.take(4)?.try_into().unwrap();
    if found != magic {
        return Err(FormatError::BadMagic { expected: magic, found });
    }
    let v = r.u32()?;
    if v != version {
        return Err(FormatError::VersionMismatch {
            expected: version,
            found: v,
        });
    }
    Ok(())
}

/// Verifies the trailing CRC32 over `bytes[..body_len]`.
pub(crate) fn check_crc(bytes: &[u8], body_len: usize) -> Result<(), FormatError> {
    if bytes.len() < body_len + 4 {
        return Err(FormatError::Truncated);
    }
    if bytes.len() > body_len + 4 {
        return Err(FormatError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - body_len - 4
        )));
    }
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(())
}

pub(crate) fn append_crc(out: &mut Vec<u8>) {
    let crc = crc32fast::hash(out);
    out.extend_from_slice(&crc.to_le_bytes());
}
