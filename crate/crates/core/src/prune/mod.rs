//! Channel pruning driven by batch-norm scales.
//!
//! Prunable batch norms sit between a producing convolution and a GELU that
//! feeds a consuming convolution. Dropping channel `c` removes the
//! producer's output `c`, the batch-norm entries, and the consumer's input
//! `c`, after folding the constant `gelu(beta_c)` that channel carries with
//! `gamma_c = 0` into the consumer's bias.

mod ebt;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{count_flops, count_params, EnelfModel, LayerKind};
use crate::nn::{gelu, ConvParams, Scalar, Tensor};

pub use ebt::{ebt_detect, mask_distance, EbtFound, MaskHistory, EBT_EPSILON, EBT_WINDOW};

/// Which channels may be removed; recorded in every report.
pub const PRUNE_SCOPE: &str =
    "block-internal and SR-tower batch norms only; residual trunk and output layers are never pruned";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMask {
    /// Index into `EnelfModel::layers`.
    pub layer: usize,
    pub name: String,
    pub keep: Vec<bool>,
}

impl LayerMask {
    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn dropped(&self) -> usize {
        self.keep.len() - self.kept()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub ratio: f64,
    /// `|gamma|` of the last channel in drop order, 0 when nothing drops.
    pub threshold: f64,
    pub layers: Vec<LayerMask>,
}

impl PruneMask {
    pub fn total(&self) -> usize {
        self.layers.iter().map(|l| l.keep.len()).sum()
    }

    pub fn dropped(&self) -> usize {
        self.layers.iter().map(LayerMask::dropped).sum()
    }

    pub fn kept_counts(&self) -> Vec<usize> {
        self.layers.iter().map(LayerMask::kept).collect()
    }

    /// Keep flags of all layers, concatenated in layer order.
    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.layers.iter().flat_map(|l| l.keep.iter().copied())
    }
}

/// Minimum channels a prunable layer keeps: `max(1, ceil(C / 10))`.
pub fn layer_floor(channels: usize) -> usize {
    channels.div_ceil(10).max(1)
}

fn drop_count(ratio: f64, total: usize) -> usize {
    // Guard against products like 0.7 * 10 = 7.000000000000001.
    let k = ratio * total as f64;
    let r = k.round();
    let k = if (k - r).abs() < 1e-9 { r } else { k.ceil() };
    (k as usize).min(total)
}

/// Global ranking of prunable `|gamma|`: the `ceil(r * total)` smallest are
/// dropped in `(|gamma|, layer, channel)` order, skipping any channel whose
/// layer is already at its floor.
pub fn compute_mask<T: Scalar>(model: &EnelfModel<T>, ratio: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidRatio(ratio));
    }
    let indices = model.prunable_bn_indices();
    if indices.is_empty() {
        return Err(Error::Contract("model has no prunable batch norms".into()));
    }
    let mut layers: Vec<LayerMask> = indices
        .iter()
        .map(|&i| LayerMask {
            layer: i,
            name: model.layers[i].name.clone(),
            keep: vec![true; model.layers[i].as_bn().map_or(0, |p| p.channels())],
        })
        .collect();
    let mut order: Vec<(f64, usize, usize)> = Vec::new();
    for (li, &i) in indices.iter().enumerate() {
        let bn = model.layers[i].as_bn().expect("prunable layers are batch norms");
        order.extend(bn.gamma.iter().enumerate().map(|(c, g)| (g.as_f64().abs(), li, c)));
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let k = drop_count(ratio, order.len());
    let threshold = if k == 0 { 0.0 } else { order[k - 1].0 };
    let mut kept: Vec<usize> = layers.iter().map(|l| l.keep.len()).collect();
    for &(_, li, c) in &order[..k] {
        if kept[li] > layer_floor(layers[li].keep.len()) {
            layers[li].keep[c] = false;
            kept[li] -= 1;
        }
    }
    Ok(PruneMask {
        ratio,
        threshold,
        layers,
    })
}

fn check_mask<T: Scalar>(model: &EnelfModel<T>, mask: &PruneMask) -> Result<()> {
    let indices = model.prunable_bn_indices();
    if indices.len() != mask.layers.len() {
        return Err(Error::Shape(format!(
            "mask covers {} layers, model has {} prunable",
            mask.layers.len(),
            indices.len()
        )));
    }
    for (&i, lm) in indices.iter().zip(&mask.layers) {
        let bn = model.layers[i].as_bn().expect("prunable layers are batch norms");
        if lm.layer != i || lm.keep.len() != bn.channels() {
            return Err(Error::Shape(format!("mask entry `{}` does not match the model", lm.name)));
        }
        if lm.kept() == 0 {
            return Err(Error::Contract(format!("mask removes every channel of `{}`", lm.name)));
        }
    }
    Ok(())
}

/// The masked model: dropped channels get `gamma = 0` and nothing else
/// changes.
pub fn zero_gamma<T: Scalar>(model: &EnelfModel<T>, mask: &PruneMask) -> Result<EnelfModel<T>> {
    check_mask(model, mask)?;
    let mut out = model.clone();
    for lm in &mask.layers {
        if let LayerKind::Bn(p) = &mut out.layers[lm.layer].kind {
            for (g, &k) in p.gamma.iter_mut().zip(&lm.keep) {
                if !k {
                    *g = T::zero();
                }
            }
        }
    }
    Ok(out)
}

fn select_axis<T: Scalar>(t: &Tensor<T>, axis: usize, keep: &[bool]) -> Result<Tensor<T>> {
    let [a, b, h, w] = t.shape();
    let plane = h * w;
    let kept = keep.iter().filter(|&&k| k).count();
    let mut data = Vec::with_capacity(t.len() / keep.len() * kept);
    for i in 0..a {
        if axis == 0 && !keep[i] {
            continue;
        }
        for j in 0..b {
            if axis == 1 && !keep[j] {
                continue;
            }
            let start = (i * b + j) * plane;
            data.extend_from_slice(&t.data()[start..start + plane]);
        }
    }
    let shape = if axis == 0 { [kept, b, h, w] } else { [a, kept, h, w] };
    Tensor::from_vec(shape, data)
}

fn trim_producer<T: Scalar>(kind: &mut LayerKind<T>, keep: &[bool]) -> Result<()> {
    let (p, axis) = match kind {
        LayerKind::Conv(p) => (p, 0),
        LayerKind::ConvT(p) => (p, 1),
        _ => return Err(Error::Contract("prunable batch norm is not preceded by a convolution".into())),
    };
    p.weight = select_axis(&p.weight, axis, keep)?;
    p.bias = p.bias.iter().zip(keep).filter(|(_, &k)| k).map(|(&b, _)| b).collect();
    Ok(())
}

fn trim_consumer<T: Scalar>(p: &mut ConvParams<T>, keep: &[bool], constants: &[f64]) -> Result<()> {
    let [cout, cin, kh, kw] = p.weight.shape();
    let taps = kh * kw;
    for o in 0..cout {
        let mut add = 0.0;
        for c in (0..cin).filter(|&c| !keep[c]) {
            let start = (o * cin + c) * taps;
            let w: f64 = p.weight.data()[start..start + taps].iter().map(|v| v.as_f64()).sum();
            add += constants[c] * w;
        }
        p.bias[o] = T::from_f64_lossy(p.bias[o].as_f64() + add);
    }
    p.weight = select_axis(&p.weight, 1, keep)?;
    Ok(())
}

/// Physically removes the dropped channels. The result's infer-mode
/// forward matches [`zero_gamma`] applied to the input model.
pub fn apply_surgery<T: Scalar>(model: &EnelfModel<T>, mask: &PruneMask) -> Result<EnelfModel<T>> {
    check_mask(model, mask)?;
    let mut out = model.clone();
    for lm in &mask.layers {
        let i = lm.layer;
        if lm.kept() == lm.keep.len() {
            continue;
        }
        if i == 0 || i + 2 >= out.layers.len() || !matches!(out.layers[i + 1].kind, LayerKind::Gelu) {
            return Err(Error::Contract(format!("`{}` is not followed by GELU and a convolution", lm.name)));
        }
        let bn = out.layers[i].as_bn().expect("prunable layers are batch norms").clone();
        let constants: Vec<f64> = bn.beta.iter().map(|&b| gelu(b.as_f64())).collect();
        trim_producer(&mut out.layers[i - 1].kind, &lm.keep)?;
        out.layers[i].kind = LayerKind::Bn(bn.select(&lm.keep));
        match &mut out.layers[i + 2].kind {
            LayerKind::Conv(p) => trim_consumer(p, &lm.keep, &constants)?,
            _ => {
                return Err(Error::Contract(format!(
                    "`{}` does not feed a forward convolution",
                    lm.name
                )))
            }
        }
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPruneCount {
    pub name: String,
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub ratio: f64,
    pub threshold: f64,
    pub scope: String,
    pub per_layer: Vec<LayerPruneCount>,
    pub params_before: u64,
    pub params_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
}

impl PruneReport {
    pub fn new<T: Scalar>(before: &EnelfModel<T>, after: &EnelfModel<T>, mask: &PruneMask) -> Result<Self> {
        let grid = before.config.input_grid;
        Ok(Self {
            ratio: mask.ratio,
            threshold: mask.threshold,
            scope: PRUNE_SCOPE.into(),
            per_layer: mask
                .layers
                .iter()
                .map(|l| LayerPruneCount {
                    name: l.name.clone(),
                    kept: l.kept(),
                    dropped: l.dropped(),
                })
                .collect(),
            params_before: count_params(before).total,
            params_after: count_params(after).total,
            flops_before: count_flops(before, grid)?.total,
            flops_after: count_flops(after, grid)?.total,
        })
    }
}

/// `compute_mask`, `apply_surgery` and the report in one call.
pub fn prune<T: Scalar>(model: &EnelfModel<T>, ratio: f64) -> Result<(EnelfModel<T>, PruneMask, PruneReport)> {
    let mask = compute_mask(model, ratio)?;
    let pruned = apply_surgery(model, &mask)?;
    let report = PruneReport::new(model, &pruned, &mask)?;
    Ok((pruned, mask, report))
}

/// Median of `|gamma|` over prunable batch norms.
pub fn median_abs_gamma<T: Scalar>(model: &EnelfModel<T>) -> f64 {
    let mut v: Vec<f64> = model
        .prunable_bn_indices()
        .into_iter()
        .filter_map(|i| model.layers[i].as_bn())
        .flat_map(|p| p.gamma.iter().map(|g| g.as_f64().abs()))
        .collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
