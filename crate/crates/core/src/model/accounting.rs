//! Parameter, FLOP and export-size accounting.
//!
//! FLOP conventions: convolution `2*Cin*k^2*Cout*Ho*Wo + Cout*Ho*Wo`
//! (transposed convolutions use the same formula at their output
//! resolution), batch norm `4` per element, GELU `8`, sigmoid `4`, residual
//! add `1`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{conv_output_size, convt_output_size, Scalar};

use super::{EnelfModel, LayerKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub name: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub total: u64,
    pub per_layer: Vec<LayerCount>,
}

impl Count {
    fn from_layers(per_layer: Vec<LayerCount>) -> Self {
        Self {
            total: per_layer.iter().map(|l| l.count).sum(),
            per_layer,
        }
    }
}

/// Learnable parameters: conv `Cout*Cin*k^2 + Cout`, batch norm `2C`.
/// Running statistics are not counted.
pub fn count_params<T: Scalar>(model: &EnelfModel<T>) -> Count {
    Count::from_layers(
        model
            .layers
            .iter()
            .map(|l| LayerCount {
                name: l.name.clone(),
                count: l.params().map_or(0, |(a, b)| (a.len() + b.len()) as u64),
            })
            .collect(),
    )
}

pub fn count_flops<T: Scalar>(model: &EnelfModel<T>, input_grid: [usize; 2]) -> Result<Count> {
    let [mut h, mut w] = input_grid;
    let mut c = model.input_channels() as u64;
    let mut per_layer = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let flops = match &layer.kind {
            LayerKind::Conv(p) | LayerKind::ConvT(p) => {
                let [a, b, k, _] = p.weight.shape();
                let (cin, cout) = match layer.kind {
                    LayerKind::Conv(_) => (b, a),
                    _ => (a, b),
                };
                let size: fn(usize, usize, usize, usize) -> Result<usize> = match layer.kind {
                    LayerKind::Conv(_) => conv_output_size,
                    _ => convt_output_size,
                };
                h = size(h, k, p.stride, p.padding)?;
                w = size(w, k, p.stride, p.padding)?;
                c = cout as u64;
                let out = (cout * h * w) as u64;
                2 * (cin * k * k) as u64 * out + out
            }
            LayerKind::Bn(_) => 4 * c * (h * w) as u64,
            LayerKind::Gelu => 8 * c * (h * w) as u64,
            LayerKind::Sigmoid => 4 * c * (h * w) as u64,
            LayerKind::ResidualEnd => c * (h * w) as u64,
            LayerKind::ResidualBegin => 0,
        };
        per_layer.push(LayerCount {
            name: layer.name.clone(),
            count: flops,
        });
    }
    Ok(Count::from_layers(per_layer))
}

/// Half-precision export size in MB: `params * 2 / 1e6`.
pub fn size_mb_for_params(params: u64) -> f64 {
    params as f64 * 2.0 / 1e6
}

pub fn model_size_mb<T: Scalar>(model: &EnelfModel<T>) -> f64 {
    size_mb_for_params(count_params(model).total)
}
