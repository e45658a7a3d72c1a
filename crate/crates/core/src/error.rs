use std::io;

use thiserror::Error;

/// Failure modes of on-disk formats (checkpoints and datasets).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("file truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed payload: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("degenerate batch: batch normalization needs more than one value per channel in train mode")]
    DegenerateBatch,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid pruning ratio {0}: must lie in [0, 1)")]
    InvalidRatio(f64),
    #[error("non-finite values first produced by layer `{layer}` at step {step}")]
    NonFinite { layer: String, step: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
