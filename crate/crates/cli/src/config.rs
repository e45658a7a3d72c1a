use std::path::{Path, PathBuf};

use enelf::metrics::BenchConfig;
use enelf::model::ModelConfig;
use enelf::oracle::{DistillConfig, Orbit, Scene};
use enelf::prune::{EBT_EPSILON, EBT_WINDOW};
use enelf::train::{EbtProbe, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSection {
    pub ratio: f64,
    /// Ratios run by `pipeline`; `[ratio]` when empty.
    pub sweep: Vec<f64>,
    pub ebt: bool,
    pub epsilon: f64,
    pub t: usize,
    /// Training steps between mask probes.
    pub probe_every: usize,
    /// Stop initial training once an early-bird ticket is found.
    pub early_stop: bool,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self {
            ratio: 0.5,
            sweep: Vec::new(),
            ebt: false,
            epsilon: EBT_EPSILON,
            t: EBT_WINDOW,
            probe_every: 100,
            early_stop: false,
        }
    }
}

impl PruneSection {
    pub fn ratios(&self) -> Vec<f64> {
        if self.sweep.is_empty() {
            vec![self.ratio]
        } else {
            self.sweep.clone()
        }
    }

    pub fn probe(&self) -> Option<EbtProbe> {
        self.ebt.then(|| EbtProbe {
            ratio: self.ratio,
            epsilon: self.epsilon,
            window: self.t,
            every: self.probe_every,
            stop: self.early_stop,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    /// `lego-lite` or a path to a scene JSON file.
    pub scene: String,
    pub views: usize,
    pub test_views: usize,
    pub real_views: usize,
    /// `[height, width]`.
    pub resolution: [usize; 2],
    pub focal: f64,
    pub seed: u64,
    pub orbit: Orbit,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        Self {
            scene: "lego-lite".into(),
            views: d.train_views,
            test_views: d.test_views,
            real_views: d.real_views,
            resolution: [d.height, d.width],
            focal: d.focal,
            seed: d.seed,
            orbit: d.orbit,
        }
    }
}

impl DataSection {
    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            train_views: self.views,
            test_views: self.test_views,
            real_views: self.real_views,
            height: self.resolution[0],
            width: self.resolution[1],
            focal: self.focal,
            seed: self.seed,
            orbit: self.orbit,
        }
    }

    pub fn load_scene(&self) -> enelf::Result<Scene> {
        if self.scene == "lego-lite" {
            Ok(Scene::lego_lite())
        } else {
            Scene::load(Path::new(&self.scene))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsSection {
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/checkpoints`.
    pub checkpoints: Option<PathBuf>,
    /// Defaults to `<out_dir>/datasets`.
    pub datasets: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/desk"),
            checkpoints: None,
            datasets: None,
        }
    }
}

impl PathsSection {
    pub fn checkpoints(&self) -> PathBuf {
        self.checkpoints.clone().unwrap_or_else(|| self.out_dir.join("checkpoints"))
    }

    pub fn datasets(&self) -> PathBuf {
        self.datasets.clone().unwrap_or_else(|| self.out_dir.join("datasets"))
    }

    pub fn reports(&self) -> PathBuf {
        self.out_dir.join("reports")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub prune: PruneSection,
    pub data: DataSection,
    pub paths: PathsSection,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            prune: PruneSection::default(),
            data: DataSection::default(),
            paths: PathsSection::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Recursively overlays `patch` onto `base`; every key in `patch` must
/// already exist in `base`.
fn merge(base: &mut Value, patch: Value, at: &str) -> Result<(), CliError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                let slot = b.get_mut(&k).ok_or_else(|| CliError::Usage(format!("unknown config key `{path}`")))?;
                merge(slot, v, &path)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Parses a flag value: JSON when it parses, a bare string otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut slot = root;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| CliError::Usage(format!("unknown option `--{key}`")))?;
    }
    *slot = value;
    Ok(())
}

/// Defaults, then the config file, then `ENELF_SEED`, then flag overrides.
pub fn resolve(
    file: Option<&Path>,
    overrides: &[(String, String)],
    env_seed: Option<&str>,
) -> Result<RunConfig, CliError> {
    let mut tree = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        merge(&mut tree, patch, "")?;
    }
    if let Some(raw) = env_seed {
        let seed: u64 = raw
            .parse()
            .map_err(|_| CliError::Usage(format!("ENELF_SEED must be an unsigned integer, got `{raw}`")))?;
        set_path(&mut tree, "train.seed", Value::from(seed))?;
        set_path(&mut tree, "data.seed", Value::from(seed))?;
    }
    for (key, raw) in overrides {
        set_path(&mut tree, key, parse_value(raw))?;
    }
    let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        for r in self.prune.ratios() {
            if !(0.0..1.0).contains(&r) {
                return Err(CliError::Usage(format!("pruning ratio {r} out of range: must lie in [0, 1)")));
            }
        }
        self.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.model.output_size() != self.data.resolution {
            return Err(CliError::Usage(format!(
                "model renders {:?} but data.resolution is {:?}",
                self.model.output_size(),
                self.data.resolution
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
