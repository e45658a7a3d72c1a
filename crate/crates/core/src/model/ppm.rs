use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Binary PPM (P6) of batch item `n` of a `[N, 3, H, W]` image tensor.
/// Values are clamped to `[0, 1]` and rounded to 8 bits.
pub fn encode_ppm<T: Scalar>(image: &Tensor<T>, n: usize) -> Result<Vec<u8>> {
    let [batch, c, h, w] = image.shape();
    if c != 3 || n >= batch {
        return Err(Error::Shape(format!("cannot write item {n} of {:?} as RGB", image.shape())));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = image.at(n, ch, y, x).as_f64().clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn write_ppm<T: Scalar>(path: &Path, image: &Tensor<T>, n: usize) -> Result<()> {
    fs::write(path, encode_ppm(image, n)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_quantization() {
        let img = Tensor::from_vec([1, 3, 1, 2], vec![0.0f32, 1.5, 0.5, -1.0, 1.0 / 255.0, 0.2]).unwrap();
        let bytes = encode_ppm(&img, 0).unwrap();
        let header = b"P6\n2 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 128, 1, 255, 0, 51]);
    }
}
