//! The `enelf` command line: one subcommand per pipeline stage, sharing a
//! JSON run configuration with `--section.key value` overrides.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use enelf::metrics::{bench_latency, dump_views, evaluate, render_prediction, EvalReport};
use enelf::model::{build_model, load_checkpoint, save_checkpoint, write_ppm, EnelfModel};
use enelf::nn::Rng;
use enelf::oracle::{distill, load_dataset, DistillOutput, DistilledDataset};
use enelf::prune::{prune, PruneReport};
use enelf::train::{train_loop, TrainData, TrainOptions, TrainOutcome};
use thiserror::Error;

pub use config::{resolve, DataSection, PathsSection, PruneSection, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] enelf::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("refusing to overwrite existing {}", .0.display())]
    Exists(PathBuf),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub const USAGE: &str = "\
usage: enelf <command> [--config FILE] [--section.key VALUE ...]

commands:
  distill                 render train/test/real datasets from the analytic scene
  train                   stage-1 training on the distilled split
  prune --ratio R         global BN-scale pruning with model surgery, R in [0, 1)
  finetune                retrain a pruned checkpoint on the real split
  eval                    PSNR/SSIM on the test split plus size accounting
  render --pose-index I   render test view I to PPM
  bench                   host-CPU latency of one forward pass
  pipeline                distill, train, prune, finetune, eval and bench in order

options:
  --config FILE           JSON run config (fields: model, train, prune, data, paths, bench)
  --ratio R               shorthand for --prune.ratio R
  --checkpoint FILE       checkpoint for eval/render/bench/prune/finetune
  --pose-index I          test view index for render
  --section.key VALUE     override any config field; VALUE is JSON or a bare string

environment:
  ENELF_THREADS           worker threads for rendering and evaluation
  ENELF_SEED              overrides train.seed and data.seed
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Distill,
    Train,
    Prune,
    Finetune,
    Eval,
    Render,
    Bench,
    Pipeline,
}

impl Command {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "distill" => Self::Distill,
            "train" => Self::Train,
            "prune" => Self::Prune,
            "finetune" => Self::Finetune,
            "eval" => Self::Eval,
            "render" => Self::Render,
            "bench" => Self::Bench,
            "pipeline" => Self::Pipeline,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::Distill => "distill",
            Self::Train => "train",
            Self::Prune => "prune",
            Self::Finetune => "finetune",
            Self::Eval => "eval",
            Self::Render => "render",
            Self::Bench => "bench",
            Self::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: Command,
    pub config_file: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub pose_index: Option<usize>,
    pub overrides: Vec<(String, String)>,
}

/// Splits `argv` (without the program name) into a command and its flags.
pub fn parse_args(args: &[String]) -> Result<Invocation, CliError> {
    let (first, rest) = args
        .split_first()
        .ok_or_else(|| CliError::Usage("missing command".into()))?;
    let command = Command::parse(first).ok_or_else(|| CliError::Usage(format!("unknown command `{first}`")))?;
    let mut inv = Invocation {
        command,
        config_file: None,
        checkpoint: None,
        pose_index: None,
        overrides: Vec::new(),
    };
    let mut it = rest.iter();
    while let Some(flag) = it.next() {
        let name = flag
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("unexpected argument `{flag}`")))?;
        let (name, inline) = match name.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (name, None),
        };
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("option `--{name}` needs a value")))?,
        };
        match name {
            "config" => inv.config_file = Some(PathBuf::from(value)),
            "checkpoint" => inv.checkpoint = Some(PathBuf::from(value)),
            "ratio" => inv.overrides.push(("prune.ratio".into(), value)),
            "pose-index" => {
                inv.pose_index = Some(
                    value
                        .parse()
                        .map_err(|_| CliError::Usage(format!("--pose-index expects an integer, got `{value}`")))?,
                )
            }
            key if key.contains('.') => inv.overrides.push((key.to_string(), value)),
            other => return Err(CliError::Usage(format!("unknown option `--{other}`"))),
        }
    }
    if command == Command::Render && inv.pose_index.is_none() {
        return Err(CliError::Usage("render needs --pose-index".into()));
    }
    Ok(inv)
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn run(args: &[String]) -> i32 {
    if matches!(args.first().map(String::as_str), Some("help" | "--help" | "-h")) {
        print!("{USAGE}");
        return 0;
    }
    let result = parse_args(args).and_then(|inv| {
        let cfg = resolve(
            inv.config_file.as_deref(),
            &inv.overrides,
            std::env::var("ENELF_SEED").ok().as_deref(),
        )?;
        configure_threads()?;
        execute(&inv, &cfg)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 2 {
                eprint!("\n{USAGE}");
            }
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ENELF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("ENELF_THREADS must be a positive integer, got `{raw}`")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Artifact locations for one run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub data: DistillOutput,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
    pub renders: PathBuf,
}

impl Layout {
    pub fn new(paths: &PathsSection) -> Self {
        Self {
            data: DistillOutput::in_dir(&paths.datasets()),
            checkpoints: paths.checkpoints(),
            reports: paths.reports(),
            renders: paths.out_dir.join("renders"),
        }
    }

    pub fn baseline(&self) -> PathBuf {
        self.checkpoints.join("baseline.enlf")
    }

    pub fn pruned(&self, ratio: f64) -> PathBuf {
        self.checkpoints.join(format!("pruned_r{ratio:.2}.enlf"))
    }

    pub fn finetuned(&self, ratio: f64) -> PathBuf {
        self.checkpoints.join(format!("finetuned_r{ratio:.2}.enlf"))
    }

    pub fn prune_report(&self, ratio: f64) -> PathBuf {
        self.reports.join(format!("prune_r{ratio:.2}.json"))
    }

    pub fn eval_report(&self, tag: &str) -> PathBuf {
        self.reports.join(format!("eval_{tag}.json"))
    }
}

fn fresh(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        return Err(CliError::Exists(path.to_path_buf()));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_once(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fresh(path)?;
    let mut f = fs::OpenOptions::new().write(true).create_new(true).open(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(enelf::Error::from)?;
    write_once(path, text.as_bytes())
}

fn save_model(path: &Path, model: &EnelfModel) -> Result<(), CliError> {
    fresh(path)?;
    save_checkpoint(model, path)?;
    Ok(())
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("[enelf] {}", msg.as_ref());
}

fn load_split(path: &Path) -> Result<DistilledDataset, CliError> {
    load_dataset(path).map_err(|e| match e {
        enelf::Error::Io(io) => CliError::Usage(format!("cannot read dataset {}: {io}", path.display())),
        other => other.into(),
    })
}

fn load_model(path: &Path) -> Result<EnelfModel, CliError> {
    load_checkpoint(path).map_err(|e| match e {
        enelf::Error::Io(io) => CliError::Usage(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other.into(),
    })
}

pub fn run_distill(cfg: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    for p in [&layout.data.train, &layout.data.test, &layout.data.real] {
        fresh(p)?;
    }
    let scene = cfg.data.load_scene()?;
    progress(format!(
        "distilling {} train / {} test / {} real views of `{}`",
        cfg.data.views, cfg.data.test_views, cfg.data.real_views, scene.id
    ));
    let dir = layout.data.train.parent().unwrap_or(Path::new("."));
    distill(&scene, &cfg.data.distill_config(), dir)?;
    Ok(())
}

fn train_stage(
    model: &mut EnelfModel,
    ds: &DistilledDataset,
    tc: &enelf::train::TrainConfig,
    log: PathBuf,
    probe: Option<enelf::train::EbtProbe>,
) -> Result<TrainOutcome, CliError> {
    fresh(&log)?;
    let data = TrainData::new(&model.config, ds)?;
    let opts = TrainOptions {
        log_path: Some(log),
        checkpoint_dir: None,
        ebt: probe,
    };
    Ok(train_loop(model, &data, tc, &opts)?)
}

pub fn run_train(cfg: &RunConfig, layout: &Layout) -> Result<EnelfModel, CliError> {
    let out = layout.baseline();
    fresh(&out)?;
    let ds = load_split(&layout.data.train)?;
    let mut model = build_model::<f32>(&cfg.model, &mut Rng::new(cfg.train.seed))?;
    progress(format!("training {} iterations, batch {}", cfg.train.iters, cfg.train.batch_size));
    let outcome = train_stage(
        &mut model,
        &ds,
        &cfg.train,
        layout.reports.join("train_log.csv"),
        cfg.prune.probe(),
    )?;
    if let Some(last) = outcome.log.last() {
        progress(format!("step {} loss {:.5} psnr {:.2} dB", last.step, last.loss, last.psnr));
    }
    if cfg.prune.ebt {
        write_json(&layout.reports.join("ebt.json"), &outcome.ebt)?;
    }
    save_model(&out, &model)?;
    Ok(model)
}

pub fn run_prune(layout: &Layout, ratio: f64, input: Option<&Path>) -> Result<(EnelfModel, PruneReport), CliError> {
    let out = layout.pruned(ratio);
    let report_path = layout.prune_report(ratio);
    fresh(&out)?;
    fresh(&report_path)?;
    let base = load_model(input.unwrap_or(&layout.baseline()))?;
    let (pruned, _, report) = prune(&base, ratio)?;
    progress(format!(
        "ratio {ratio:.2}: params {} -> {}, flops {} -> {}",
        report.params_before, report.params_after, report.flops_before, report.flops_after
    ));
    save_model(&out, &pruned)?;
    write_json(&report_path, &report)?;
    Ok((pruned, report))
}

pub fn run_finetune(cfg: &RunConfig, layout: &Layout, ratio: f64, input: Option<&Path>) -> Result<EnelfModel, CliError> {
    let out = layout.finetuned(ratio);
    fresh(&out)?;
    let mut model = load_model(input.unwrap_or(&layout.pruned(ratio)))?;
    let ds = load_split(&layout.data.real)?;
    let tc = cfg.train.finetune();
    progress(format!("finetuning ratio {ratio:.2} for {} iterations", tc.iters));
    train_stage(
        &mut model,
        &ds,
        &tc,
        layout.reports.join(format!("finetune_r{ratio:.2}.csv")),
        None,
    )?;
    save_model(&out, &model)?;
    Ok(model)
}

pub fn run_eval(cfg: &RunConfig, layout: &Layout, model: &EnelfModel, tag: &str) -> Result<EvalReport, CliError> {
    let path = layout.eval_report(tag);
    fresh(&path)?;
    let ds = load_split(&layout.data.test)?;
    let mut report = evaluate(model, &ds)?;
    report.latency = Some(bench_latency(model, model.config.input_grid, &cfg.bench)?);
    progress(format!(
        "{tag}: PSNR {:.2} dB, SSIM {:.4}, {} params",
        report.mean_psnr, report.mean_ssim, report.params
    ));
    write_json(&path, &report)?;
    let dir = layout.renders.join(tag);
    if !dir.exists() {
        dump_views(model, &ds, 4, &dir)?;
    }
    Ok(report)
}

fn tag_for(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

pub fn run_pipeline(cfg: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    run_distill(cfg, layout)?;
    let baseline = run_train(cfg, layout)?;
    run_eval(cfg, layout, &baseline, "baseline")?;
    for ratio in cfg.prune.ratios() {
        run_prune(layout, ratio, None)?;
        let tuned = run_finetune(cfg, layout, ratio, None)?;
        run_eval(cfg, layout, &tuned, &format!("r{ratio:.2}"))?;
    }
    Ok(())
}

fn execute(inv: &Invocation, cfg: &RunConfig) -> Result<(), CliError> {
    let layout = Layout::new(&cfg.paths);
    fs::create_dir_all(&cfg.paths.out_dir)?;
    fs::write(cfg.paths.out_dir.join(format!("config.{}.json", inv.command.name())), cfg.to_json())?;
    let checkpoint = inv.checkpoint.as_deref();
    match inv.command {
        Command::Distill => run_distill(cfg, &layout),
        Command::Train => run_train(cfg, &layout).map(|_| ()),
        Command::Prune => run_prune(&layout, cfg.prune.ratio, checkpoint).map(|_| ()),
        Command::Finetune => run_finetune(cfg, &layout, cfg.prune.ratio, checkpoint).map(|_| ()),
        Command::Eval => {
            let path = checkpoint.map_or_else(|| layout.baseline(), Path::to_path_buf);
            let model = load_model(&path)?;
            run_eval(cfg, &layout, &model, &tag_for(&path)).map(|_| ())
        }
        Command::Render => {
            let path = checkpoint.map_or_else(|| layout.baseline(), Path::to_path_buf);
            let model = load_model(&path)?;
            let ds = load_split(&layout.data.test)?;
            let i = inv.pose_index.expect("checked by the parser");
            if i >= ds.len() {
                return Err(CliError::Usage(format!(
                    "--pose-index {i} out of range: test split has {} views",
                    ds.len()
                )));
            }
            let out = layout.renders.join(format!("{}_view{i:04}.ppm", tag_for(&path)));
            fresh(&out)?;
            write_ppm(&out, &render_prediction(&model, &ds, i)?, 0)?;
            progress(format!("wrote {}", out.display()));
            Ok(())
        }
        Command::Bench => {
            let path = checkpoint.map_or_else(|| layout.baseline(), Path::to_path_buf);
            let model = load_model(&path)?;
            let stats = bench_latency(&model, model.config.input_grid, &cfg.bench)?;
            progress(format!(
                "median {:.3} ms, p90 {:.3} ms, {:.0} rays/s",
                stats.median_ms, stats.p90_ms, stats.rays_per_sec
            ));
            let out = layout.reports.join(format!("bench_{}.json", tag_for(&path)));
            fs::create_dir_all(&layout.reports)?;
            fs::write(out, serde_json::to_string_pretty(&stats).map_err(enelf::Error::from)?)?;
            Ok(())
        }
        Command::Pipeline => run_pipeline(cfg, &layout),
    }
}
