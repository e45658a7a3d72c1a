//! The ENeLF network: configuration, ray encoding, layer stack, accounting
//! and checkpoint I/O.

mod accounting;
mod checkpoint;
mod config;
mod net;
mod ppm;
mod rays;

pub use accounting::{count_flops, count_params, model_size_mb, size_mb_for_params, Count, LayerCount};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{sr_channel_schedule, ModelConfig, RayConfig, SrSpec};
pub use net::{build_model, EnelfModel, Grads, Layer, LayerKind, Trace};
pub use ppm::{encode_ppm, write_ppm};
pub use rays::{encode_coordinate, encode_rays, grid_rays, RayGrid};
