//! Analytic teacher: a small ray-traced scene, camera sampling on a
//! hemisphere orbit, and persisted distilled datasets.

mod dataset;
mod scene;

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{camera_rays, CameraPose, Intrinsics};
use crate::error::{Error, Result};
use crate::nn::{Rng, Tensor};

pub use dataset::{
    decode_dataset, encode_dataset, load_dataset, save_dataset, DatasetHeader, DistilledDataset, Sample,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use scene::{Background, Ground, Scene, Sphere, SCENE_VERSION};

/// Orbit used for pose sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub radius: f64,
    /// Elevation bounds in degrees.
    pub elevation: [f64; 2],
}

impl Default for Orbit {
    fn default() -> Self {
        Self {
            radius: 4.0,
            elevation: [10.0, 80.0],
        }
    }
}

/// Pose `i` of `n_views`: azimuth jittered inside stratum `i` of
/// `[0, 2pi)`, elevation uniform inside the orbit's range.
pub fn sample_pose(i: usize, n_views: usize, seed: u64, orbit: &Orbit) -> Result<CameraPose> {
    if n_views == 0 {
        return Err(Error::Config("n_views must be at least 1".into()));
    }
    let [lo, hi] = orbit.elevation;
    if !(orbit.radius > 0.0) || !(-90.0 < lo && lo <= hi && hi < 90.0) {
        return Err(Error::Config(format!(
            "orbit radius {} / elevation {:?} out of range",
            orbit.radius, orbit.elevation
        )));
    }
    let mut rng = Rng::derive(seed, i as u64);
    let theta = 2.0 * PI * (i as f64 + rng.uniform()) / n_views as f64;
    let phi = rng.uniform_in(lo, hi).to_radians();
    let r = orbit.radius;
    CameraPose::look_at_origin([r * phi.cos() * theta.cos(), r * phi.sin(), r * phi.cos() * theta.sin()])
}

/// `[1, 3, H, W]` image; pixel `(r, c)` is lit by the same ray the model
/// encodes for that pixel.
pub fn render_view(scene: &Scene, pose: &CameraPose, k: &Intrinsics) -> Result<Tensor<f32>> {
    let plane = k.height * k.width;
    let mut data = vec![0f32; 3 * plane];
    for (p, ray) in camera_rays(pose, k).iter().enumerate() {
        let rgb = scene.render_ray(ray.origin, ray.dir)?;
        for c in 0..3 {
            data[c * plane + p] = rgb[c] as f32;
        }
    }
    Tensor::from_vec([1, 3, k.height, k.width], data)
}

/// Renders `n_views` views; poses are stored at f32 precision, so the
/// stored pose is exactly the rendered one.
pub fn render_dataset(
    scene: &Scene,
    n_views: usize,
    k: &Intrinsics,
    seed: u64,
    orbit: &Orbit,
) -> Result<DistilledDataset> {
    if n_views == 0 {
        return Err(Error::Config("n_views must be at least 1".into()));
    }
    let samples = (0..n_views)
        .into_par_iter()
        .map(|i| {
            let pose = sample_pose(i, n_views, seed, orbit)?.quantized_f32();
            let image = render_view(scene, &pose, k)?;
            Ok(Sample { pose, image })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistilledDataset {
        header: DatasetHeader {
            scene_id: scene.id.clone(),
            views: n_views,
            height: k.height,
            width: k.width,
            focal: k.focal,
            seed,
        },
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub train_views: usize,
    pub test_views: usize,
    /// Held-aside split used for finetuning after pruning.
    pub real_views: usize,
    pub height: usize,
    pub width: usize,
    pub focal: f64,
    pub seed: u64,
    pub orbit: Orbit,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            train_views: 500,
            test_views: 64,
            real_views: 100,
            height: 64,
            width: 64,
            focal: 88.0,
            seed: 0,
            orbit: Orbit::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillOutput {
    pub train: PathBuf,
    pub test: PathBuf,
    pub real: PathBuf,
}

impl DistillOutput {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train: dir.join("train.enld"),
            test: dir.join("test.enld"),
            real: dir.join("real.enld"),
        }
    }
}

/// Writes the train, test and real splits, seeded `seed`, `seed + 1` and
/// `seed + 2`.
pub fn distill(scene: &Scene, cfg: &DistillConfig, out_dir: &Path) -> Result<DistillOutput> {
    let k = Intrinsics::centered(cfg.height, cfg.width, cfg.focal)?;
    for n in [cfg.train_views, cfg.test_views, cfg.real_views] {
        if n == 0 {
            return Err(Error::Config("every split needs at least one view".into()));
        }
    }
    fs::create_dir_all(out_dir)?;
    let out = DistillOutput::in_dir(out_dir);
    let splits = [
        (&out.train, cfg.train_views, cfg.seed),
        (&out.test, cfg.test_views, cfg.seed.wrapping_add(1)),
        (&out.real, cfg.real_views, cfg.seed.wrapping_add(2)),
    ];
    for (path, n, seed) in splits {
        let ds = render_dataset(scene, n, &k, seed, &cfg.orbit)?;
        save_dataset(path, &ds)?;
    }
    Ok(out)
}
