use crate::error::{Error, Result};
use crate::nn::{
    bn_bwd, bn_fwd, conv2d_bwd, conv2d_fwd, convt2d_bwd, convt2d_fwd, gelu_bwd, gelu_fwd, sigmoid_bwd,
    sigmoid_fwd, BnParams, ConvParams, Dist, Mode, PaddingMode, Rng, Scalar, Tensor,
};

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind<T> {
    Conv(ConvParams<T>),
    ConvT(ConvParams<T>),
    Bn(BnParams<T>),
    Gelu,
    ResidualBegin,
    ResidualEnd,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind<T>,
    /// Only set on batch norms whose channels may be removed by pruning.
    pub prunable: bool,
}

impl<T: Scalar> Layer<T> {
    fn new(name: impl Into<String>, kind: LayerKind<T>) -> Self {
        Self {
            name: name.into(),
            kind,
            prunable: false,
        }
    }

    /// The two learnable vectors of a layer: (weight, bias) or (gamma, beta).
    pub fn params(&self) -> Option<(&[T], &[T])> {
        match &self.kind {
            LayerKind::Conv(p) | LayerKind::ConvT(p) => Some((p.weight.data(), &p.bias)),
            LayerKind::Bn(p) => Some((&p.gamma, &p.beta)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut [T], &mut [T])> {
        match &mut self.kind {
            LayerKind::Conv(p) | LayerKind::ConvT(p) => Some((p.weight.data_mut(), &mut p.bias)),
            LayerKind::Bn(p) => Some((&mut p.gamma, &mut p.beta)),
            _ => None,
        }
    }

    pub fn as_bn(&self) -> Option<&BnParams<T>> {
        match &self.kind {
            LayerKind::Bn(p) => Some(p),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv(_) => "conv",
            LayerKind::ConvT(_) => "convt",
            LayerKind::Bn(_) => "bn",
            LayerKind::Gelu => "gelu",
            LayerKind::ResidualBegin => "residual_begin",
            LayerKind::ResidualEnd => "residual_end",
            LayerKind::Sigmoid => "sigmoid",
        }
    }
}

/// Gradients for every learnable layer, aligned with `EnelfModel::layers`.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    pub layers: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(model: &EnelfModel<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| l.params().map(|(a, b)| (vec![T::zero(); a.len()], vec![T::zero(); b.len()])))
                .collect(),
        }
    }
}

/// Everything a backward pass needs from a train-mode forward.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// `inputs[i]` is the activation entering layer `i`.
    pub inputs: Vec<Tensor<T>>,
    pub output: Tensor<T>,
    pub mode: Mode,
}

/// The ENeLF network: ray grid in, image in `[0, 1]` out.
///
/// Layer order: head 1x1 conv; `d_blocks` residual blocks of
/// `BN -> GELU -> Conv1x1 -> BN -> GELU -> Conv1x1` with a skip over the
/// pair; per SR block a transposed conv then `BN -> GELU -> Conv3x3`; tail
/// 1x1 conv to RGB and a sigmoid. Batch norms sit before the convolutions
/// they feed, so each BN scale gates exactly one conv input channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EnelfModel<T = f32> {
    pub config: ModelConfig,
    pub layers: Vec<Layer<T>>,
    pub mode: Mode,
}

fn conv_layer<T: Scalar>(rng: &mut Rng, cin: usize, cout: usize, k: usize, pad: usize) -> Result<LayerKind<T>> {
    let w = Tensor::random([cout, cin, k, k], rng, Dist::KaimingFanIn)?;
    Ok(LayerKind::Conv(ConvParams::new(w, vec![T::zero(); cout], 1, pad)?))
}

pub fn build_model<T: Scalar>(cfg: &ModelConfig, rng: &mut Rng) -> Result<EnelfModel<T>> {
    cfg.validate()?;
    let gamma = T::from_f64_lossy(if cfg.sparsity_init { 0.5 } else { 1.0 });
    let w = cfg.width;
    let mut layers = Vec::new();
    layers.push(Layer::new("head.conv", conv_layer(rng, cfg.input_channels(), w, 1, 0)?));
    for b in 0..cfg.d_blocks {
        let p = format!("block{b}");
        layers.push(Layer::new(format!("{p}.begin"), LayerKind::ResidualBegin));
        layers.push(Layer::new(format!("{p}.bn1"), LayerKind::Bn(BnParams::new(w, gamma))));
        layers.push(Layer::new(format!("{p}.gelu1"), LayerKind::Gelu));
        layers.push(Layer::new(format!("{p}.conv1"), conv_layer(rng, w, w, 1, 0)?));
        let mut bn2 = Layer::new(format!("{p}.bn2"), LayerKind::Bn(BnParams::new(w, gamma)));
        bn2.prunable = true;
        layers.push(bn2);
        layers.push(Layer::new(format!("{p}.gelu2"), LayerKind::Gelu));
        layers.push(Layer::new(format!("{p}.conv2"), conv_layer(rng, w, w, 1, 0)?));
        layers.push(Layer::new(format!("{p}.end"), LayerKind::ResidualEnd));
    }
    let mut channels = w;
    for (i, sr) in cfg.sr_blocks.iter().enumerate() {
        let p = format!("sr{i}");
        let c = sr.out_channels;
        let wt = Tensor::random([channels, c, sr.kernel, sr.kernel], rng, Dist::KaimingFanIn)?;
        let convt = ConvParams::new(wt, vec![T::zero(); c], sr.stride, sr.padding)?;
        layers.push(Layer::new(format!("{p}.convt"), LayerKind::ConvT(convt)));
        let mut bn = Layer::new(format!("{p}.bn"), LayerKind::Bn(BnParams::new(c, gamma)));
        bn.prunable = true;
        layers.push(bn);
        layers.push(Layer::new(format!("{p}.gelu"), LayerKind::Gelu));
        let LayerKind::Conv(conv) = conv_layer::<T>(rng, c, c, 3, 1)? else {
            unreachable!()
        };
        // Replicate padding maps a constant channel to a constant, which is
        // what lets pruning fold a removed channel into the bias exactly.
        layers.push(Layer::new(
            format!("{p}.conv"),
            LayerKind::Conv(conv.with_mode(PaddingMode::Replicate)),
        ));
        channels = c;
    }
    layers.push(Layer::new("tail.conv", conv_layer(rng, channels, 3, 1, 0)?));
    layers.push(Layer::new("tail.sigmoid", LayerKind::Sigmoid));
    let model = EnelfModel {
        config: cfg.clone(),
        layers,
        mode: Mode::Infer,
    };
    model.validate()?;
    Ok(model)
}

struct Run<T> {
    output: Tensor<T>,
    inputs: Option<Vec<Tensor<T>>>,
    bn_stats: Vec<(usize, Vec<T>, Vec<T>, usize)>,
}

impl<T: Scalar> EnelfModel<T> {
    pub fn input_channels(&self) -> usize {
        self.config.input_channels()
    }

    /// Checks the channel chain end to end and the residual pairing.
    pub fn validate(&self) -> Result<()> {
        let mut channels = self.input_channels();
        let mut open: Option<usize> = None;
        for layer in &self.layers {
            let mismatch = |want: usize| {
                Error::Config(format!(
                    "layer `{}` expects {want} channels but receives {channels}",
                    layer.name
                ))
            };
            match &layer.kind {
                LayerKind::Conv(p) => {
                    let [cout, cin, _, _] = p.weight.shape();
                    if cin != channels {
                        return Err(mismatch(cin));
                    }
                    if p.bias.len() != cout {
                        return Err(Error::Config(format!("layer `{}` bias length", layer.name)));
                    }
                    channels = cout;
                }
                LayerKind::ConvT(p) => {
                    let [cin, cout, _, _] = p.weight.shape();
                    if cin != channels {
                        return Err(mismatch(cin));
                    }
                    if p.bias.len() != cout {
                        return Err(Error::Config(format!("layer `{}` bias length", layer.name)));
                    }
                    channels = cout;
                }
                LayerKind::Bn(p) => {
                    p.validate()?;
                    if p.channels() != channels {
                        return Err(mismatch(p.channels()));
                    }
                }
                LayerKind::ResidualBegin => {
                    if open.replace(channels).is_some() {
                        return Err(Error::Config("nested residual blocks".into()));
                    }
                }
                LayerKind::ResidualEnd => {
                    let start = open
                        .take()
                        .ok_or_else(|| Error::Config("residual end without begin".into()))?;
                    if start != channels {
                        return Err(Error::Config(format!(
                            "residual `{}` adds {channels} channels onto {start}",
                            layer.name
                        )));
                    }
                }
                LayerKind::Gelu | LayerKind::Sigmoid => {}
            }
        }
        if open.is_some() {
            return Err(Error::Config("unterminated residual block".into()));
        }
        if channels != 3 {
            return Err(Error::Config(format!("model emits {channels} channels, expected 3")));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, mode: Mode, record: bool) -> Result<Run<T>> {
        if x.channels() != self.input_channels() {
            return Err(Error::Shape(format!(
                "ray grid has {} channels, model expects {}",
                x.channels(),
                self.input_channels()
            )));
        }
        let mut inputs = record.then(|| Vec::with_capacity(self.layers.len()));
        let mut bn_stats = Vec::new();
        let mut skip: Option<Tensor<T>> = None;
        let mut act = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let next = match &layer.kind {
                LayerKind::Conv(p) => conv2d_fwd(&act, p)?,
                LayerKind::ConvT(p) => convt2d_fwd(&act, p)?,
                LayerKind::Bn(p) => {
                    let out = bn_fwd(&act, p, mode)?;
                    if mode == Mode::Train {
                        bn_stats.push((i, out.mean, out.var, act.batch() * act.plane_len()));
                    }
                    out.y
                }
                LayerKind::Gelu => gelu_fwd(&act),
                LayerKind::Sigmoid => sigmoid_fwd(&act),
                LayerKind::ResidualBegin => {
                    skip = Some(act.clone());
                    act.clone()
                }
                LayerKind::ResidualEnd => {
                    let mut sum = act.clone();
                    sum.add_assign(skip.as_ref().ok_or_else(|| Error::Config("residual end without begin".into()))?)?;
                    skip = None;
                    sum
                }
            };
            if let Some(inputs) = inputs.as_mut() {
                inputs.push(std::mem::replace(&mut act, next));
            } else {
                act = next;
            }
        }
        Ok(Run {
            output: act,
            inputs,
            bn_stats,
        })
    }

    /// Forward pass in the model's current mode. Never mutates running
    /// statistics; calling it twice gives bit-identical output.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, self.mode, false)?.output)
    }

    /// Forward pass recording every layer input for [`Self::backward`].
    /// In train mode the batch statistics are folded into the running
    /// estimates.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Trace<T>> {
        let run = self.run(x, self.mode, true)?;
        for (i, mean, var, count) in run.bn_stats {
            if let LayerKind::Bn(p) = &mut self.layers[i].kind {
                p.update_running(&mean, &var, count);
            }
        }
        Ok(Trace {
            inputs: run.inputs.unwrap_or_default(),
            output: run.output,
            mode: self.mode,
        })
    }

    /// Activations entering each layer plus the final output, without any
    /// state update. Used to locate the first layer emitting non-finite values.
    pub fn activations(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        let run = self.run(x, self.mode, true)?;
        Ok(Trace {
            inputs: run.inputs.unwrap_or_default(),
            output: run.output,
            mode: self.mode,
        })
    }

    /// Name of the first layer whose output contains NaN or infinity.
    pub fn first_non_finite_layer(&self, x: &Tensor<T>) -> Result<Option<String>> {
        let trace = self.activations(x)?;
        let outputs = trace.inputs.iter().skip(1).chain(std::iter::once(&trace.output));
        Ok(self
            .layers
            .iter()
            .zip(outputs)
            .find(|(_, out)| !out.all_finite())
            .map(|(l, _)| l.name.clone()))
    }

    pub fn backward(&self, trace: &Trace<T>, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::Shape("trace does not belong to this model".into()));
        }
        trace.output.expect_same_shape(grad_out)?;
        let mut grads = Grads {
            layers: vec![None; self.layers.len()],
        };
        let mut g = grad_out.clone();
        let mut skip_grad: Option<Tensor<T>> = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            g = match &layer.kind {
                LayerKind::Conv(p) => {
                    let r = conv2d_bwd(x, p, &g)?;
                    grads.layers[i] = Some((r.grad_weight.into_vec(), r.grad_bias));
                    r.grad_x
                }
                LayerKind::ConvT(p) => {
                    let r = convt2d_bwd(x, p, &g)?;
                    grads.layers[i] = Some((r.grad_weight.into_vec(), r.grad_bias));
                    r.grad_x
                }
                LayerKind::Bn(p) => {
                    let r = bn_bwd(x, p, trace.mode, &g)?;
                    grads.layers[i] = Some((r.grad_gamma, r.grad_beta));
                    r.grad_x
                }
                LayerKind::Gelu => gelu_bwd(x, &g)?,
                LayerKind::Sigmoid => sigmoid_bwd(&sigmoid_fwd(x), &g)?,
                LayerKind::ResidualEnd => {
                    skip_grad = Some(g.clone());
                    g
                }
                LayerKind::ResidualBegin => {
                    let mut total = g;
                    total.add_assign(
                        skip_grad
                            .as_ref()
                            .ok_or_else(|| Error::Config("residual begin without end".into()))?,
                    )?;
                    skip_grad = None;
                    total
                }
            };
        }
        Ok(grads)
    }

    /// Indices of prunable batch-norm layers, in layer order.
    pub fn prunable_bn_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.prunable && l.as_bn().is_some())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> EnelfModel<U> {
        let conv = |p: &ConvParams<T>| ConvParams {
            weight: p.weight.cast(),
            bias: p.bias.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            stride: p.stride,
            padding: p.padding,
            padding_mode: p.padding_mode,
        };
        let vec = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                name: l.name.clone(),
                prunable: l.prunable,
                kind: match &l.kind {
                    LayerKind::Conv(p) => LayerKind::Conv(conv(p)),
                    LayerKind::ConvT(p) => LayerKind::ConvT(conv(p)),
                    LayerKind::Bn(p) => LayerKind::Bn(BnParams {
                        gamma: vec(&p.gamma),
                        beta: vec(&p.beta),
                        running_mean: vec(&p.running_mean),
                        running_var: vec(&p.running_var),
                        eps: U::from_f64_lossy(p.eps.as_f64()),
                        momentum: U::from_f64_lossy(p.momentum.as_f64()),
                    }),
                    LayerKind::Gelu => LayerKind::Gelu,
                    LayerKind::ResidualBegin => LayerKind::ResidualBegin,
                    LayerKind::ResidualEnd => LayerKind::ResidualEnd,
                    LayerKind::Sigmoid => LayerKind::Sigmoid,
                },
            })
            .collect();
        EnelfModel {
            config: self.config.clone(),
            layers,
            mode: self.mode,
        }
    }

    /// Sum of `|gamma|` over prunable batch norms.
    pub fn sum_abs_gamma(&self) -> f64 {
        self.prunable_bn_indices()
            .into_iter()
            .filter_map(|i| self.layers[i].as_bn())
            .flat_map(|p| p.gamma.iter().map(|g| g.as_f64().abs()))
            .sum()
    }
}
