//! `ENLD` distilled-dataset files.
//!
//! Layout (little-endian): magic `ENLD`, u32 version, u64 header length,
//! header JSON, then per sample 12 f32 (row-major 3x4 camera-to-world pose)
//! and `H*W*3` f32 pixels in row-major RGB order; a CRC32 of everything
//! before it closes the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, Intrinsics};
use crate::codec::{append_crc, check_crc, check_preamble, Reader};
use crate::error::{Error, FormatError, Result};
use crate::nn::Tensor;

pub const DATASET_MAGIC: [u8; 4] = *b"ENLD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub scene_id: String,
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub focal: f64,
    pub seed: u64,
}

impl DatasetHeader {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::centered(self.height, self.width, self.focal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pose: CameraPose,
    /// `[1, 3, H, W]`.
    pub image: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistilledDataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl DistilledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.views != self.samples.len() {
            return Err(Error::Contract(format!(
                "header lists {} views, dataset holds {}",
                h.views,
                self.samples.len()
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.image.shape() != [1, 3, h.height, h.width] {
                return Err(Error::Shape(format!(
                    "sample {i} image {:?} does not match {}x{}",
                    s.image.shape(),
                    h.height,
                    h.width
                )));
            }
            if s.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Contract(format!("sample {i} has pixels outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Images of the given samples stacked along the batch axis.
    pub fn images(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let parts: Vec<_> = indices.iter().map(|&i| self.samples[i].image.clone()).collect();
        Tensor::concat_batch(&parts)
    }
}

pub fn encode_dataset(ds: &DistilledDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let json = serde_json::to_vec(&ds.header)?;
    let (h, w) = (ds.header.height, ds.header.width);
    let mut out = Vec::with_capacity(24 + json.len() + ds.len() * (48 + 12 * h * w));
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for s in &ds.samples {
        for v in s.pose.matrix_3x4() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out.extend_from_slice(&s.image.at(0, c, y, x).to_le_bytes());
                }
            }
        }
    }
    append_crc(&mut out);
    Ok(out)
}

fn f32_at(bytes: &[u8], i: usize) -> f32 {
    f32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<DistilledDataset> {
    check_preamble(bytes, DATASET_MAGIC, DATASET_VERSION)?;
    let mut r = Reader::new(bytes);
    r.take(8)?;
    let json_len = r.len_u64()?;
    let header: DatasetHeader = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| FormatError::Malformed(format!("header: {e}")))?;
    let (h, w) = (header.height, header.width);
    let record = 12usize
        .checked_add(h.checked_mul(w).and_then(|p| p.checked_mul(3)).ok_or(FormatError::Truncated)?)
        .and_then(|n| n.checked_mul(4))
        .ok_or(FormatError::Truncated)?;
    let body = record.checked_mul(header.views).ok_or(FormatError::Truncated)?;
    let payload = r.take(body)?;
    check_crc(bytes, r.position())?;

    let mut samples = Vec::with_capacity(header.views);
    for chunk in payload.chunks_exact(record.max(1)).take(header.views) {
        let m: [f64; 12] = std::array::from_fn(|i| f32_at(chunk, i) as f64);
        let mut data = vec![0f32; 3 * h * w];
        for p in 0..h * w {
            for c in 0..3 {
                data[c * h * w + p] = f32_at(chunk, 12 + 3 * p + c);
            }
        }
        samples.push(Sample {
            pose: CameraPose::from_matrix_3x4(&m),
            image: Tensor::from_vec([1, 3, h, w], data)?,
        });
    }
    let ds = DistilledDataset { header, samples };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(path: &Path, ds: &DistilledDataset) -> Result<()> {
    fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DistilledDataset> {
    decode_dataset(&fs::read(path)?)
}
