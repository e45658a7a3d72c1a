//! Image quality metrics, evaluation reports and the latency harness.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{count_flops, count_params, encode_rays, model_size_mb, write_ppm, EnelfModel};
use crate::nn::{Dist, Mode, Rng, Scalar, Tensor};
use crate::oracle::DistilledDataset;

pub const MSE_FLOOR: f64 = 1e-10;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR with a peak of 1; the MSE floor caps it at 100 dB.
pub fn psnr_from_mse(mse: f64) -> f64 {
    10.0 * (1.0 / mse.max(MSE_FLOOR)).log10()
}

pub fn psnr<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sum / pred.len() as f64))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over valid positions only.
fn filter(img: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> f64 {
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter(a, h, w, g);
    let mu_b = filter(b, h, w, g);
    let aa = filter(&prod(a, a), h, w, g);
    let bb = filter(&prod(b, b), h, w, g);
    let ab = filter(&prod(a, b), h, w, g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    total / n as f64
}

/// Mean SSIM: 11x11 Gaussian window with sigma 1.5, valid windows only,
/// averaged over channels and batch items.
pub fn ssim<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(target)?;
    let [n, c, h, w] = pred.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    for b in 0..n {
        for ch in 0..c {
            let pa: Vec<f64> = pred.plane(b, ch).iter().map(|v| v.as_f64()).collect();
            let pb: Vec<f64> = target.plane(b, ch).iter().map(|v| v.as_f64()).collect();
            total += ssim_plane(&pa, &pb, h, w, &g);
        }
    }
    Ok(total / (n * c) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub p90_ms: f64,
    pub rays_per_sec: f64,
}

impl LatencyStats {
    /// Summary of wall times for one forward producing `rays` pixels.
    pub fn from_samples(samples_ms: Vec<f64>, rays: usize) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::Config("latency benchmark needs at least one run".into()));
        }
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let p90_ms = sorted[((0.9 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Ok(Self {
            samples_ms,
            median_ms,
            p90_ms,
            rays_per_sec: rays as f64 / (median_ms / 1e3),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub warmup: usize,
    pub runs: usize,
    /// Run inside a one-thread pool.
    pub single_thread: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 3,
            runs: 20,
            single_thread: true,
        }
    }
}

/// Times infer-mode forwards of one ray grid of `input_grid` size.
pub fn bench_latency<T: Scalar>(model: &EnelfModel<T>, input_grid: [usize; 2], cfg: &BenchConfig) -> Result<LatencyStats> {
    if cfg.runs == 0 {
        return Err(Error::Config("latency benchmark needs at least one run".into()));
    }
    let mut m = model.clone();
    m.mode = Mode::Infer;
    let [h, w] = input_grid;
    let x = Tensor::<T>::random([1, m.input_channels(), h, w], &mut Rng::new(0), Dist::Uniform(-1.0, 1.0))?;
    let run = || -> Result<LatencyStats> {
        let mut rays = 0;
        for _ in 0..cfg.warmup {
            m.forward(&x)?;
        }
        let mut samples = Vec::with_capacity(cfg.runs);
        for _ in 0..cfg.runs {
            let start = Instant::now();
            let out = m.forward(&x)?;
            samples.push((start.elapsed().as_secs_f64() * 1e3).max(1e-6));
            rays = out.plane_len();
        }
        LatencyStats::from_samples(samples, rays)
    };
    if cfg.single_thread {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub params: u64,
    pub flops: u64,
    pub size_mb: f64,
    #[serde(default)]
    pub latency: Option<LatencyStats>,
}

/// Infer-mode rendering of dataset view `i`.
pub fn render_prediction<T: Scalar>(model: &EnelfModel<T>, ds: &DistilledDataset, i: usize) -> Result<Tensor<T>> {
    let sample = ds.samples.get(i).ok_or(Error::EmptyDataset)?;
    let k = ds.header.intrinsics()?;
    let grid = encode_rays::<T>(&sample.pose, &k, &model.config)?;
    let mut m = model.clone();
    m.mode = Mode::Infer;
    m.forward(&grid.features)
}

pub fn evaluate<T: Scalar>(model: &EnelfModel<T>, ds: &DistilledDataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if model.config.output_size() != [ds.header.height, ds.header.width] {
        return Err(Error::Shape(format!(
            "model renders {:?}, dataset holds {}x{}",
            model.config.output_size(),
            ds.header.height,
            ds.header.width
        )));
    }
    let views = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let pred: Tensor<f32> = render_prediction(model, ds, i)?.cast();
            let target = &ds.samples[i].image;
            Ok(ViewMetrics {
                index: i,
                psnr: psnr(&pred, target)?,
                ssim: ssim(&pred, target)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = views.len() as f64;
    Ok(EvalReport {
        mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        views,
        params: count_params(model).total,
        flops: count_flops(model, model.config.input_grid)?.total,
        size_mb: model_size_mb(model),
        latency: None,
    })
}

/// Writes `view_XXXX_pred.ppm` and `view_XXXX_gt.ppm` for the first
/// `count` views.
pub fn dump_views<T: Scalar>(model: &EnelfModel<T>, ds: &DistilledDataset, count: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for i in 0..count.min(ds.len()) {
        write_ppm(&dir.join(format!("view_{i:04}_pred.ppm")), &render_prediction(model, ds, i)?, 0)?;
        write_ppm(&dir.join(format!("view_{i:04}_gt.ppm")), &ds.samples[i].image, 0)?;
    }
    Ok(())
}
