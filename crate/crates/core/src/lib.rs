//! Neural light field toolkit: a ray-to-colour CNN with transposed-conv
//! super-resolution, distilled from an analytic teacher renderer and
//! compressed by batch-norm-driven channel pruning.

pub mod camera;
mod codec;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod prune;
pub mod train;

pub use error::{Error, FormatError, Result};
