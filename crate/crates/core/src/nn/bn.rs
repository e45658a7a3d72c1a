use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    #[default]
    Infer,
}

/// Batch-normalization parameters. `gamma` is the channel-importance signal
/// used by pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

#[derive(Debug, Clone)]
pub struct BnOutput<T> {
    pub y: Tensor<T>,
    /// Per-channel statistics the output was normalized with.
    pub mean: Vec<T>,
    /// Biased variance in train mode, running variance in infer mode.
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
}

impl<T: Scalar> BnParams<T> {
    pub fn new(channels: usize, gamma_init: T) -> Self {
        Self {
            gamma: vec![gamma_init; channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::from_f64_lossy(BN_EPS),
            momentum: T::from_f64_lossy(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if [self.beta.len(), self.running_mean.len(), self.running_var.len()]
            .iter()
            .any(|&l| l != c)
        {
            return Err(Error::Shape("batch-norm parameter lengths disagree".into()));
        }
        if self.eps <= T::zero() || self.running_var.iter().any(|&v| v < T::zero()) {
            return Err(Error::Contract("batch norm needs eps > 0 and running_var >= 0".into()));
        }
        Ok(())
    }

    /// Folds train-mode batch statistics into the running estimates. The
    /// running variance tracks the unbiased estimate.
    pub fn update_running(&mut self, batch_mean: &[T], batch_var: &[T], count: usize) {
        let m = self.momentum.as_f64();
        let correction = count as f64 / (count as f64 - 1.0).max(1.0);
        for c in 0..self.channels() {
            let rm = self.running_mean[c].as_f64();
            let rv = self.running_var[c].as_f64();
            self.running_mean[c] = T::from_f64_lossy((1.0 - m) * rm + m * batch_mean[c].as_f64());
            self.running_var[c] =
                T::from_f64_lossy((1.0 - m) * rv + m * batch_var[c].as_f64() * correction);
        }
    }

    /// Drops the channels whose `keep` flag is false.
    pub fn select(&self, keep: &[bool]) -> Self {
        let pick = |v: &[T]| -> Vec<T> {
            v.iter().zip(keep).filter(|(_, &k)| k).map(|(&x, _)| x).collect()
        };
        Self {
            gamma: pick(&self.gamma),
            beta: pick(&self.beta),
            running_mean: pick(&self.running_mean),
            running_var: pick(&self.running_var),
            eps: self.eps,
            momentum: self.momentum,
        }
    }
}

fn check_input<T: Scalar>(x: &Tensor<T>, p: &BnParams<T>) -> Result<()> {
    p.validate()?;
    if x.channels() != p.channels() {
        return Err(Error::Shape(format!(
            "batch norm over {} channels got {}",
            p.channels(),
            x.channels()
        )));
    }
    Ok(())
}

/// Per-channel mean and biased variance over `N*H*W`, accumulated in f64.
fn batch_stats<T: Scalar>(x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let [n, c, _, _] = x.shape();
    let m = (n * x.plane_len()) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let s: f64 = (0..n).flat_map(|b| x.plane(b, ch)).map(|v| v.as_f64()).sum();
        mean[ch] = s / m;
        let sq: f64 = (0..n)
            .flat_map(|b| x.plane(b, ch))
            .map(|v| {
                let d = v.as_f64() - mean[ch];
                d * d
            })
            .sum();
        var[ch] = sq / m;
    }
    (mean, var)
}

fn stats<T: Scalar>(x: &Tensor<T>, p: &BnParams<T>, mode: Mode) -> Result<(Vec<f64>, Vec<f64>)> {
    match mode {
        Mode::Train => {
            if x.batch() * x.plane_len() <= 1 {
                return Err(Error::DegenerateBatch);
            }
            Ok(batch_stats(x))
        }
        Mode::Infer => Ok((
            p.running_mean.iter().map(|v| v.as_f64()).collect(),
            p.running_var.iter().map(|v| v.as_f64()).collect(),
        )),
    }
}

pub fn bn_fwd<T: Scalar>(x: &Tensor<T>, p: &BnParams<T>, mode: Mode) -> Result<BnOutput<T>> {
    check_input(x, p)?;
    let (mean, var) = stats(x, p, mode)?;
    let eps = p.eps.as_f64();
    let mut y = x.clone();
    let plane = x.plane_len();
    let c = x.channels();
    for (i, chunk) in y.data_mut().chunks_exact_mut(plane).enumerate() {
        let ch = i % c;
        let scale = p.gamma[ch].as_f64() / (var[ch] + eps).sqrt();
        let shift = p.beta[ch].as_f64() - mean[ch] * scale;
        let (scale, shift) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        if p.gamma[ch] == T::zero() {
            chunk.fill(p.beta[ch]);
        } else {
            for v in chunk {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(BnOutput {
        y,
        mean: mean.into_iter().map(T::from_f64_lossy).collect(),
        var: var.into_iter().map(T::from_f64_lossy).collect(),
    })
}

pub fn bn_bwd<T: Scalar>(x: &Tensor<T>, p: &BnParams<T>, mode: Mode, grad_out: &Tensor<T>) -> Result<BnGrads<T>> {
    check_input(x, p)?;
    x.expect_same_shape(grad_out)?;
    let (mean, var) = stats(x, p, mode)?;
    let eps = p.eps.as_f64();
    let [n, c, _, _] = x.shape();
    let m = (n * x.plane_len()) as f64;
    let mut grad_x = Tensor::zeros(x.shape())?;
    let mut grad_gamma = vec![T::zero(); c];
    let mut grad_beta = vec![T::zero(); c];
    for ch in 0..c {
        let inv_std = 1.0 / (var[ch] + eps).sqrt();
        let gamma = p.gamma[ch].as_f64();
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for b in 0..n {
            for (&xv, &gv) in x.plane(b, ch).iter().zip(grad_out.plane(b, ch)) {
                let g = gv.as_f64();
                sum_g += g;
                sum_gx += g * (xv.as_f64() - mean[ch]) * inv_std;
            }
        }
        grad_beta[ch] = T::from_f64_lossy(sum_g);
        grad_gamma[ch] = T::from_f64_lossy(sum_gx);
        let plane = x.plane_len();
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in 0..plane {
                let g = grad_out.data()[off + i].as_f64();
                let v = match mode {
                    Mode::Train => {
                        let xhat = (x.data()[off + i].as_f64() - mean[ch]) * inv_std;
                        gamma * inv_std / m * (m * g - sum_g - xhat * sum_gx)
                    }
                    Mode::Infer => gamma * inv_std * g,
                };
                grad_x.data_mut()[off + i] = T::from_f64_lossy(v);
            }
        }
    }
    Ok(BnGrads {
        grad_x,
        grad_gamma,
        grad_beta,
    })
}
