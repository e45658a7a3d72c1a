//! Tensor type and the hand-written forward/backward layer primitives.
//!
//! Every op is a pure function: inputs are borrowed, outputs freshly
//! allocated, and repeated calls are bit-identical.

mod act;
mod bn;
mod conv;
mod rng;
mod scalar;
mod tensor;

pub use act::{gelu, gelu_bwd, gelu_fwd, gelu_grad, sigmoid, sigmoid_bwd, sigmoid_fwd};
pub use bn::{bn_bwd, bn_fwd, BnGrads, BnOutput, BnParams, Mode, BN_EPS, BN_MOMENTUM};
pub use conv::{
    conv2d_bwd, conv2d_fwd, conv_output_size, convt2d_bwd, convt2d_fwd, convt_output_size, ConvGrads,
    ConvParams, PaddingMode,
};
pub use rng::{Dist, Rng};
pub use scalar::Scalar;
pub use tensor::Tensor;
