//! `ENLF` checkpoint files.
//!
//! Layout (little-endian): magic `ENLF`, u32 version, u64 config length,
//! config JSON, u32 tensor count, then per tensor u16 name length, name,
//! u8 dtype (0 = f32, 1 = f64), u8 ndim, u32 dims, u64 byte length, raw
//! values; a CRC32 of everything before it closes the file.
//!
//! The JSON carries the model config plus the concrete layer list, so a
//! pruned model (whose widths no longer follow the config) loads back
//! exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{append_crc, check_crc, check_preamble, Reader};
use crate::error::{Error, FormatError, Result};
use crate::nn::{BnParams, ConvParams, Mode, PaddingMode, Scalar, Tensor};

use super::{EnelfModel, Layer, LayerKind, ModelConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ENLF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerSpec {
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        padding_mode: PaddingMode,
    },
    Convt {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        padding_mode: PaddingMode,
    },
    Bn {
        name: String,
        channels: usize,
        eps: f64,
        momentum: f64,
        prunable: bool,
    },
    Gelu {
        name: String,
    },
    ResidualBegin {
        name: String,
    },
    ResidualEnd {
        name: String,
    },
    Sigmoid {
        name: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    mode: Mode,
    layers: Vec<LayerSpec>,
}

struct RawTensor<'a> {
    name: String,
    dtype: u8,
    dims: Vec<usize>,
    bytes: &'a [u8],
}

fn spec_of<T: Scalar>(layer: &Layer<T>) -> LayerSpec {
    let name = layer.name.clone();
    match &layer.kind {
        LayerKind::Conv(p) => {
            let [o, i, k, _] = p.weight.shape();
            LayerSpec::Conv {
                name,
                in_channels: i,
                out_channels: o,
                kernel: k,
                stride: p.stride,
                padding: p.padding,
                padding_mode: p.padding_mode,
            }
        }
        LayerKind::ConvT(p) => {
            let [i, o, k, _] = p.weight.shape();
            LayerSpec::Convt {
                name,
                in_channels: i,
                out_channels: o,
                kernel: k,
                stride: p.stride,
                padding: p.padding,
                padding_mode: p.padding_mode,
            }
        }
        LayerKind::Bn(p) => LayerSpec::Bn {
            name,
            channels: p.channels(),
            eps: p.eps.as_f64(),
            momentum: p.momentum.as_f64(),
            prunable: layer.prunable,
        },
        LayerKind::Gelu => LayerSpec::Gelu { name },
        LayerKind::ResidualBegin => LayerSpec::ResidualBegin { name },
        LayerKind::ResidualEnd => LayerSpec::ResidualEnd { name },
        LayerKind::Sigmoid => LayerSpec::Sigmoid { name },
    }
}

fn layer_tensors<T: Scalar>(layer: &Layer<T>) -> Vec<(String, Vec<usize>, &[T])> {
    let n = &layer.name;
    match &layer.kind {
        LayerKind::Conv(p) | LayerKind::ConvT(p) => vec![
            (format!("{n}.weight"), p.weight.shape().to_vec(), p.weight.data()),
            (format!("{n}.bias"), vec![p.bias.len()], &p.bias[..]),
        ],
        LayerKind::Bn(p) => vec![
            (format!("{n}.gamma"), vec![p.channels()], &p.gamma[..]),
            (format!("{n}.beta"), vec![p.channels()], &p.beta[..]),
            (format!("{n}.running_mean"), vec![p.channels()], &p.running_mean[..]),
            (format!("{n}.running_var"), vec![p.channels()], &p.running_var[..]),
        ],
        _ => Vec::new(),
    }
}

pub fn encode_checkpoint<T: Scalar>(model: &EnelfModel<T>) -> Result<Vec<u8>> {
    let meta = Meta {
        config: model.config.clone(),
        mode: model.mode,
        layers: model.layers.iter().map(spec_of).collect(),
    };
    let json = serde_json::to_vec(&meta)?;
    let tensors: Vec<_> = model.layers.iter().flat_map(layer_tensors).collect();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, values) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE);
        out.push(dims.len() as u8);
        for d in &dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.extend_from_slice(&((values.len() * T::BYTES) as u64).to_le_bytes());
        for &v in values {
            v.write_le(&mut out);
        }
    }
    append_crc(&mut out);
    Ok(out)
}

fn parse_frame(bytes: &[u8]) -> std::result::Result<(&[u8], Vec<RawTensor<'_>>), FormatError> {
    check_preamble(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let mut r = Reader::new(bytes);
    r.take(8)?;
    let config_len = r.len_u64()?;
    let config = r.take(config_len)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        let dtype = r.u8()?;
        let ndim = r.u8()? as usize;
        let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let byte_len = r.len_u64()?;
        let bytes = r.take(byte_len)?;
        tensors.push(RawTensor {
            name,
            dtype,
            dims,
            bytes,
        });
    }
    check_crc(bytes, r.position())?;
    Ok((config, tensors))
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Format(FormatError::Malformed(msg.into()))
}

fn values<T: Scalar>(raw: &RawTensor<'_>, name: &str, dims: &[usize]) -> Result<Vec<T>> {
    if raw.name != name {
        return Err(malformed(format!("expected tensor `{name}`, found `{}`", raw.name)));
    }
    if raw.dtype != T::DTYPE {
        return Err(malformed(format!("tensor `{name}` has dtype {}, expected {}", raw.dtype, T::DTYPE)));
    }
    if raw.dims != dims {
        return Err(malformed(format!("tensor `{name}` has dims {:?}, expected {dims:?}", raw.dims)));
    }
    let count: usize = dims.iter().product();
    if raw.bytes.len() != count * T::BYTES {
        return Err(malformed(format!("tensor `{name}` byte length")));
    }
    Ok(raw.bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<EnelfModel<T>> {
    let (config, raw) = parse_frame(bytes)?;
    let meta: Meta = serde_json::from_slice(config).map_err(|e| malformed(format!("config json: {e}")))?;
    let mut raw = raw.iter();
    let mut next = |name: String, dims: Vec<usize>| -> Result<Vec<T>> {
        let t = raw.next().ok_or_else(|| malformed(format!("missing tensor `{name}`")))?;
        values(t, &name, &dims)
    };
    let mut layers = Vec::with_capacity(meta.layers.len());
    for spec in meta.layers {
        let (name, kind, prunable) = match spec {
            LayerSpec::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                padding_mode,
            } => {
                let dims = vec![out_channels, in_channels, kernel, kernel];
                let w = Tensor::from_vec([out_channels, in_channels, kernel, kernel], next(format!("{name}.weight"), dims)?)?;
                let b = next(format!("{name}.bias"), vec![out_channels])?;
                let p = ConvParams::new(w, b, stride, padding)?.with_mode(padding_mode);
                (name, LayerKind::Conv(p), false)
            }
            LayerSpec::Convt {
                name,
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                padding_mode,
            } => {
                let dims = vec![in_channels, out_channels, kernel, kernel];
                let w = Tensor::from_vec([in_channels, out_channels, kernel, kernel], next(format!("{name}.weight"), dims)?)?;
                let b = next(format!("{name}.bias"), vec![out_channels])?;
                let p = ConvParams::new(w, b, stride, padding)?.with_mode(padding_mode);
                (name, LayerKind::ConvT(p), false)
            }
            LayerSpec::Bn {
                name,
                channels,
                eps,
                momentum,
                prunable,
            } => {
                let p = BnParams {
                    gamma: next(format!("{name}.gamma"), vec![channels])?,
                    beta: next(format!("{name}.beta"), vec![channels])?,
                    running_mean: next(format!("{name}.running_mean"), vec![channels])?,
                    running_var: next(format!("{name}.running_var"), vec![channels])?,
                    eps: T::from_f64_lossy(eps),
                    momentum: T::from_f64_lossy(momentum),
                };
                (name, LayerKind::Bn(p), prunable)
            }
            LayerSpec::Gelu { name } => (name, LayerKind::Gelu, false),
            LayerSpec::ResidualBegin { name } => (name, LayerKind::ResidualBegin, false),
            LayerSpec::ResidualEnd { name } => (name, LayerKind::ResidualEnd, false),
            LayerSpec::Sigmoid { name } => (name, LayerKind::Sigmoid, false),
        };
        layers.push(Layer { name, kind, prunable });
    }
    if raw.next().is_some() {
        return Err(malformed("unexpected extra tensors"));
    }
    let model = EnelfModel {
        config: meta.config,
        layers,
        mode: meta.mode,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &EnelfModel<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<EnelfModel<T>> {
    decode_checkpoint(&fs::read(path)?)
}
