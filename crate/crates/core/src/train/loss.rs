use crate::error::Result;
use crate::model::EnelfModel;
use crate::nn::{Scalar, Tensor};

/// Mean squared error and its gradient `2 (pred - target) / count`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.expect_same_shape(target)?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let scale = T::from_f64_lossy(2.0 / n);
    let grad = pred.zip_map(target, |p, t| (p - t) * scale)?;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p.as_f64() - t.as_f64();
        sum += d * d;
    }
    Ok((sum / n, grad))
}

/// Gradient of the L1 penalty for one prunable batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaGrad<T> {
    pub layer: usize,
    pub grad: Vec<T>,
}

/// `lambda * sum |gamma|` over prunable batch norms, with subgradient
/// `lambda * sign(gamma)` and `sign(0) = 0`.
pub fn sparsity_penalty<T: Scalar>(model: &EnelfModel<T>, lambda: f64) -> (f64, Vec<GammaGrad<T>>) {
    let mut penalty = 0.0;
    let mut grads = Vec::new();
    for i in model.prunable_bn_indices() {
        let bn = model.layers[i].as_bn().expect("prunable layers are batch norms");
        let grad = bn
            .gamma
            .iter()
            .map(|&g| {
                penalty += lambda * g.as_f64().abs();
                let sign = if g > T::zero() {
                    1.0
                } else if g < T::zero() {
                    -1.0
                } else {
                    0.0
                };
                T::from_f64_lossy(lambda * sign)
            })
            .collect();
        grads.push(GammaGrad { layer: i, grad });
    }
    (penalty, grads)
}
