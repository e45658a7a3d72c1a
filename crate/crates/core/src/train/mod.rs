//! Training: photometric MSE plus an L1 penalty on prunable batch-norm
//! scales, optimized with Adam under a step-decay schedule.

mod adam;
mod loss;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::psnr_from_mse;
use crate::model::{encode_rays, save_checkpoint, EnelfModel, ModelConfig};
use crate::nn::{Mode, Rng, Scalar, Tensor};
use crate::oracle::DistilledDataset;
use crate::prune::{compute_mask, ebt_detect, EbtFound, MaskHistory};

pub use adam::{adam_step, AdamState, LrDecay, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use loss::{mse_loss, sparsity_penalty, GammaGrad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    Distill,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iters: usize,
    /// Whole views per step.
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: LrDecay,
    pub sparsity_lambda: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub stage: Stage,
    /// Finetune length; 30% of `iters` when unset.
    pub finetune_iters: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 3000,
            batch_size: 4,
            lr: 5e-4,
            lr_decay: LrDecay::default(),
            sparsity_lambda: 1e-4,
            seed: 0,
            eval_every: 100,
            checkpoint_every: 0,
            stage: Stage::Distill,
            finetune_iters: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.sparsity_lambda >= 0.0) || !self.sparsity_lambda.is_finite() {
            return Err(Error::Config(format!("sparsity_lambda {} must be >= 0", self.sparsity_lambda)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(self.lr_decay.factor > 0.0) {
            return Err(Error::Config("lr_decay.factor must be positive".into()));
        }
        Ok(())
    }

    /// Post-pruning stage: no sparsity penalty, a fifth of the rate.
    pub fn finetune(&self) -> Self {
        Self {
            iters: self
                .finetune_iters
                .unwrap_or_else(|| (self.iters as f64 * 0.3).round() as usize),
            lr: self.lr / 5.0,
            sparsity_lambda: 0.0,
            stage: Stage::Finetune,
            ..self.clone()
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr_decay.lr_at(self.lr, step, self.iters)
    }
}

/// Ray grids and target images, aligned by view.
#[derive(Debug, Clone)]
pub struct TrainData<T> {
    pub inputs: Vec<Tensor<T>>,
    pub targets: Vec<Tensor<T>>,
}

impl<T: Scalar> TrainData<T> {
    pub fn new(cfg: &ModelConfig, ds: &DistilledDataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let h = &ds.header;
        if cfg.output_size() != [h.height, h.width] {
            return Err(Error::Shape(format!(
                "model renders {:?}, dataset holds {}x{} images",
                cfg.output_size(),
                h.height,
                h.width
            )));
        }
        let k = h.intrinsics()?;
        let inputs = ds
            .samples
            .iter()
            .map(|s| Ok(encode_rays::<T>(&s.pose, &k, cfg)?.features))
            .collect::<Result<Vec<_>>>()?;
        let targets = ds.samples.iter().map(|s| s.image.cast()).collect();
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let x: Vec<_> = indices.iter().map(|&i| self.inputs[i].clone()).collect();
        let y: Vec<_> = indices.iter().map(|&i| self.targets[i].clone()).collect();
        Ok((Tensor::concat_batch(&x)?, Tensor::concat_batch(&y)?))
    }
}

/// Views used at `step`: consecutive slices of a per-epoch shuffle seeded
/// by `(seed, epoch)`. Batches never straddle epochs.
pub fn batch_indices(seed: u64, views: usize, batch_size: usize, step: usize) -> Vec<usize> {
    let size = batch_size.min(views);
    let per_epoch = views / size;
    let epoch = step / per_epoch;
    let slot = step % per_epoch;
    let mut order: Vec<usize> = (0..views).collect();
    Rng::derive(seed, epoch as u64).shuffle(&mut order);
    order[slot * size..(slot + 1) * size].to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub psnr: f64,
    pub lr: f64,
    pub sum_abs_gamma: f64,
}

/// Periodic mask probe for early-bird detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbtProbe {
    pub ratio: f64,
    pub epsilon: f64,
    pub window: usize,
    pub every: usize,
    /// Stop training once a ticket is found.
    pub stop: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// CSV metrics log, truncated then appended to.
    pub log_path: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub ebt: Option<EbtProbe>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub steps: usize,
    pub history: MaskHistory,
    pub ebt: Option<EbtFound>,
}

struct CsvLog(Option<BufWriter<File>>);

impl CsvLog {
    fn open(path: Option<&PathBuf>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self(None)) };
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "step,loss,psnr,lr,sum_abs_gamma")?;
        Ok(Self(Some(w)))
    }

    fn row(&mut self, r: &LogRow) -> Result<()> {
        if let Some(w) = &mut self.0 {
            writeln!(w, "{},{},{},{},{}", r.step, r.loss, r.psnr, r.lr, r.sum_abs_gamma)?;
            w.flush()?;
        }
        Ok(())
    }
}

/// Loss of `model` on one batch exactly as the training step computes it:
/// train-mode forward, MSE plus the sparsity penalty. Returns
/// `(total, mse)`.
pub fn batch_loss<T: Scalar>(model: &EnelfModel<T>, x: &Tensor<T>, y: &Tensor<T>, lambda: f64) -> Result<(f64, f64)> {
    let mut m = model.clone();
    m.mode = Mode::Train;
    let out = m.forward(x)?;
    let (mse, _) = mse_loss(&out, y)?;
    let (penalty, _) = sparsity_penalty(&m, lambda);
    Ok((mse + penalty, mse))
}

/// Runs `cfg.iters` optimizer steps. The model is left in infer mode.
pub fn train_loop<T: Scalar>(
    model: &mut EnelfModel<T>,
    data: &TrainData<T>,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(dir) = &opts.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let mut csv = CsvLog::open(opts.log_path.as_ref())?;
    let mut state = AdamState::new(model);
    let mut outcome = TrainOutcome {
        log: Vec::new(),
        steps: 0,
        history: MaskHistory::default(),
        ebt: None,
    };
    let eval_every = cfg.eval_every.max(1);
    for step in 0..cfg.iters {
        let (x, y) = data.batch(&batch_indices(cfg.seed, data.len(), cfg.batch_size, step))?;
        model.mode = Mode::Train;
        let snapshot = model.clone();
        let trace = model.forward_train(&x)?;
        let (mse, grad) = mse_loss(&trace.output, &y)?;
        let (penalty, gamma_grads) = sparsity_penalty(model, cfg.sparsity_lambda);
        let loss = mse + penalty;
        if !loss.is_finite() {
            let layer = snapshot.first_non_finite_layer(&x)?.unwrap_or_else(|| "loss".into());
            model.mode = Mode::Infer;
            return Err(Error::NonFinite { layer, step });
        }
        let lr = cfg.lr_at(step);
        if step % eval_every == 0 || step + 1 == cfg.iters {
            let row = LogRow {
                step,
                loss,
                psnr: psnr_from_mse(mse),
                lr,
                sum_abs_gamma: snapshot.sum_abs_gamma(),
            };
            csv.row(&row)?;
            outcome.log.push(row);
        }
        let mut grads = model.backward(&trace, &grad)?;
        for gg in gamma_grads {
            if let Some((g, _)) = &mut grads.layers[gg.layer] {
                for (a, b) in g.iter_mut().zip(&gg.grad) {
                    *a += *b;
                }
            }
        }
        adam_step(model, &grads, &mut state, lr)?;
        outcome.steps = step + 1;

        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_every > 0 && outcome.steps % cfg.checkpoint_every == 0 {
                model.mode = Mode::Infer;
                save_checkpoint(model, &dir.join(format!("step_{:06}.enlf", outcome.steps)))?;
            }
        }
        if let Some(probe) = &opts.ebt {
            if probe.every > 0 && outcome.steps % probe.every == 0 {
                outcome.history.push(outcome.steps, compute_mask(model, probe.ratio)?)?;
                if outcome.ebt.is_none() {
                    outcome.ebt = ebt_detect(&outcome.history, probe.epsilon, probe.window)?;
                    if outcome.ebt.is_some() && probe.stop {
                        break;
                    }
                }
            }
        }
    }
    model.mode = Mode::Infer;
    Ok(outcome)
}
