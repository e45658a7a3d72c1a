use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnelfModel, Grads};
use crate::nn::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per learnable vector, aligned with the model's
/// layers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Option<(Vec<T>, Vec<T>)>>,
    pub v: Vec<Option<(Vec<T>, Vec<T>)>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &EnelfModel<T>) -> Self {
        let zeros = Grads::zeros_like(model).layers;
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Step-decay schedule: the rate is multiplied by `factor` at each
/// milestone, given as a fraction of the total iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub factor: f64,
    pub milestones: Vec<f64>,
}

impl Default for LrDecay {
    fn default() -> Self {
        Self {
            factor: 0.5,
            milestones: vec![0.25, 0.5, 0.75],
        }
    }
}

impl LrDecay {
    pub fn lr_at(&self, base: f64, step: usize, iters: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&f| step >= (f * iters as f64).floor() as usize)
            .count();
        base * self.factor.powi(passed as i32)
    }
}

fn update<T: Scalar>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], lr: f64, c1: f64, c2: f64) {
    for i in 0..p.len() {
        let gi = g[i].as_f64();
        let mi = ADAM_BETA1 * m[i].as_f64() + (1.0 - ADAM_BETA1) * gi;
        let vi = ADAM_BETA2 * v[i].as_f64() + (1.0 - ADAM_BETA2) * gi * gi;
        m[i] = T::from_f64_lossy(mi);
        v[i] = T::from_f64_lossy(vi);
        let step = lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
        p[i] = T::from_f64_lossy(p[i].as_f64() - step);
    }
}

/// One bias-corrected Adam update of every learnable parameter.
pub fn adam_step<T: Scalar>(model: &mut EnelfModel<T>, grads: &Grads<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    let n = model.layers.len();
    if grads.layers.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Shape("optimizer state does not match the model".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, layer) in model.layers.iter_mut().enumerate() {
        let Some((pa, pb)) = layer.params_mut() else {
            continue;
        };
        let (Some((ga, gb)), Some((ma, mb)), Some((va, vb))) = (&grads.layers[i], &mut state.m[i], &mut state.v[i])
        else {
            return Err(Error::Shape(format!("missing gradient or moments for layer `{}`", layer.name)));
        };
        if ga.len() != pa.len() || gb.len() != pb.len() || ma.len() != pa.len() || mb.len() != pb.len() {
            return Err(Error::Shape(format!("gradient shape mismatch in layer `{}`", layer.name)));
        }
        update(pa, ga, ma, va, lr, c1, c2);
        update(pb, gb, mb, vb, lr, c1, c2);
    }
    Ok(())
}
