//! End-to-end acceptance checks. Runs serially (the latency comparison
//! needs a quiet machine) and prints one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use enelf::camera::Intrinsics;
use enelf::error::{Error, FormatError};
use enelf::metrics::{bench_latency, psnr, psnr_from_mse, ssim, BenchConfig, EvalReport};
use enelf::model::{
    build_model, count_flops, count_params, decode_checkpoint, encode_checkpoint, load_checkpoint, model_size_mb,
    EnelfModel, Layer, LayerKind, ModelConfig,
};
use enelf::nn::{
    bn_bwd, bn_fwd, conv2d_bwd, conv2d_fwd, convt2d_bwd, convt2d_fwd, gelu_bwd, gelu_fwd, BnParams, ConvParams, Dist,
    Mode, PaddingMode, Rng, Tensor,
};
use enelf::oracle::{decode_dataset, encode_dataset, load_dataset, render_dataset, Orbit, Scene};
use enelf::prune::{
    apply_surgery, compute_mask, ebt_detect, median_abs_gamma, zero_gamma, LayerMask, MaskHistory, PruneMask,
    PruneReport,
};
use enelf::train::{mse_loss, sparsity_penalty, train_loop, TrainConfig, TrainData, TrainOptions};
use enelf_cli::{resolve, run_pipeline, Layout, RunConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- 1

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn fd_check(param: &[f64], analytic: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let mut v = param.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        let orig = v[i];
        v[i] = orig + h;
        let up = loss(&v);
        v[i] = orig - h;
        let down = loss(&v);
        v[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h), 1e-3));
    }
    worst
}

fn rand_t(shape: [usize; 4], rng: &mut Rng) -> Tensor<f64> {
    Tensor::random(shape, rng, Dist::Uniform(-1.0, 1.0)).unwrap()
}

fn conv_grad_err(rng: &mut Rng, transposed: bool) -> Option<f64> {
    let (n, cin, cout) = (1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3));
    let k = 1 + rng.below(4);
    let stride = 1 + rng.below(2);
    let pad = if k == 1 { 0 } else { rng.below(k) };
    let (h, w) = (1 + rng.below(5), 1 + rng.below(5));
    let mode = if rng.below(2) == 0 { PaddingMode::Zeros } else { PaddingMode::Replicate };
    let wshape = if transposed { [cin, cout, k, k] } else { [cout, cin, k, k] };
    let bias: Vec<f64> = (0..cout).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let p = ConvParams::new(rand_t(wshape, rng), bias, stride, pad).ok()?.with_mode(mode);
    let x = rand_t([n, cin, h, w], rng);
    let fwd = |x: &Tensor<f64>, p: &ConvParams<f64>| if transposed { convt2d_fwd(x, p) } else { conv2d_fwd(x, p) };
    let y = fwd(&x, &p).ok()?;
    let r = rand_t(y.shape(), rng);
    let g = if transposed { convt2d_bwd(&x, &p, &r) } else { conv2d_bwd(&x, &p, &r) }.unwrap();
    let ex = fd_check(x.data(), g.grad_x.data(), |v| {
        fwd(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &p).unwrap().dot(&r).unwrap()
    });
    let ew = fd_check(p.weight.data(), g.grad_weight.data(), |v| {
        let mut q = p.clone();
        q.weight = Tensor::from_vec(p.weight.shape(), v.to_vec()).unwrap();
        fwd(&x, &q).unwrap().dot(&r).unwrap()
    });
    let eb = fd_check(&p.bias, &g.grad_bias, |v| {
        let mut q = p.clone();
        q.bias = v.to_vec();
        fwd(&x, &q).unwrap().dot(&r).unwrap()
    });
    Some(ex.max(ew).max(eb))
}

fn bn_grad_err(rng: &mut Rng) -> f64 {
    let (n, c, h, w) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3), 2 + rng.below(2));
    let x = rand_t([n, c, h, w], rng);
    let mut p = BnParams::<f64>::new(c, 1.0);
    p.gamma = (0..c).map(|_| rng.uniform_in(0.2, 1.5)).collect();
    p.beta = (0..c).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let r = rand_t(x.shape(), rng);
    let g = bn_bwd(&x, &p, Mode::Train, &r).unwrap();
    let loss = |x: &Tensor<f64>, p: &BnParams<f64>| bn_fwd(x, p, Mode::Train).unwrap().y.dot(&r).unwrap();
    let ex = fd_check(x.data(), g.grad_x.data(), |v| loss(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &p));
    let eg = fd_check(&p.gamma, &g.grad_gamma, |v| {
        let mut q = p.clone();
        q.gamma = v.to_vec();
        loss(&x, &q)
    });
    let eb = fd_check(&p.beta, &g.grad_beta, |v| {
        let mut q = p.clone();
        q.beta = v.to_vec();
        loss(&x, &q)
    });
    ex.max(eg).max(eb)
}

fn gelu_grad_err(rng: &mut Rng) -> f64 {
    let shape = [1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)];
    let x = Tensor::random(shape, rng, Dist::Uniform(-4.0, 4.0)).unwrap();
    let r = rand_t(shape, rng);
    let g = gelu_bwd(&x, &r).unwrap();
    fd_check(x.data(), g.data(), |v| gelu_fwd(&Tensor::from_vec(shape, v.to_vec()).unwrap()).dot(&r).unwrap())
}

fn full_stack_err() -> f64 {
    let mut cfg = ModelConfig::with_scales(1, 8, &[2], [4, 4]).unwrap();
    cfg.ray.points = 2;
    cfg.ray.frequencies = 2;
    let mut rng = Rng::new(7);
    let mut model = build_model::<f64>(&cfg, &mut rng).unwrap();
    model.mode = Mode::Train;
    let x = Tensor::random([2, cfg.input_channels(), 4, 4], &mut rng, Dist::Uniform(-1.0, 1.0)).unwrap();
    let [oh, ow] = cfg.output_size();
    let target = Tensor::random([2, 3, oh, ow], &mut rng, Dist::Uniform(0.0, 1.0)).unwrap();
    let lambda = 1e-2;
    let loss = |m: &EnelfModel<f64>| mse_loss(&m.forward(&x).unwrap(), &target).unwrap().0 + sparsity_penalty(m, lambda).0;
    let trace = model.clone().forward_train(&x).unwrap();
    let (_, g_out) = mse_loss(&trace.output, &target).unwrap();
    let mut grads = model.backward(&trace, &g_out).unwrap();
    for gg in sparsity_penalty(&model, lambda).1 {
        let (g, _) = grads.layers[gg.layer].as_mut().unwrap();
        g.iter_mut().zip(&gg.grad).for_each(|(a, b)| *a += b);
    }
    let learnable: Vec<usize> = (0..model.layers.len()).filter(|&i| model.layers[i].params().is_some()).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let li = learnable[rng.below(learnable.len())];
        let (a, _) = model.layers[li].params().unwrap();
        let j = rng.below(a.len());
        let analytic = grads.layers[li].as_ref().unwrap().0[j];
        let probe = |d: f64| {
            let mut m = model.clone();
            m.layers[li].params_mut().unwrap().0[j] += d;
            loss(&m)
        };
        let numeric = (probe(1e-5) - probe(-1e-5)) / 2e-5;
        worst = worst.max(rel_err(analytic, numeric, 1e-4));
    }
    worst
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let mut report = Vec::new();
    for (name, transposed) in [("conv", false), ("convt", true)] {
        let (mut cases, mut worst) = (0, 0.0f64);
        while cases < 50 {
            if let Some(e) = conv_grad_err(&mut rng, transposed) {
                cases += 1;
                worst = worst.max(e);
            }
        }
        ensure!(worst < 1e-5, "{name} max rel err {worst:.2e}");
        report.push(format!("{name} {worst:.1e}"));
    }
    let bn = (0..50).map(|_| bn_grad_err(&mut rng)).fold(0.0, f64::max);
    ensure!(bn < 1e-5, "bn max rel err {bn:.2e}");
    let gelu = (0..50).map(|_| gelu_grad_err(&mut rng)).fold(0.0, f64::max);
    ensure!(gelu < 1e-5, "gelu max rel err {gelu:.2e}");
    let full = full_stack_err();
    ensure!(full < 1e-4, "full-stack rel err {full:.2e}");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.0} s");
    Ok(format!(
        "{} bn {bn:.1e} gelu {gelu:.1e} full-stack {full:.1e} over 50 shapes each in {secs:.1} s",
        report.join(" ")
    ))
}

// ---------------------------------------------------------------- 2

fn random_d2_sr1(seed: u64) -> EnelfModel<f32> {
    let mut rng = Rng::new(seed);
    let width = 8 + 8 * rng.below(3);
    let mut cfg = ModelConfig::with_scales(2, width, &[2], [4 + rng.below(4), 4 + rng.below(4)]).unwrap();
    cfg.ray.points = 2;
    cfg.ray.frequencies = 3;
    let mut m = build_model::<f32>(&cfg, &mut rng).unwrap();
    for l in &mut m.layers {
        if let LayerKind::Bn(p) = &mut l.kind {
            for c in 0..p.channels() {
                p.gamma[c] = rng.normal() as f32;
                p.beta[c] = (0.5 * rng.normal()) as f32;
                p.running_mean[c] = (0.3 * rng.normal()) as f32;
                p.running_var[c] = rng.uniform_in(0.2, 2.0) as f32;
            }
        }
    }
    m
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let model = random_d2_sr1(seed);
        let [h, w] = model.config.input_grid;
        let x = Tensor::random([2, model.input_channels(), h, w], &mut Rng::new(seed + 100), Dist::Uniform(-1.0, 1.0))
            .unwrap();
        for ratio in [0.3, 0.5, 0.7] {
            let mask = compute_mask(&model, ratio).map_err(|e| e.to_string())?;
            ensure!(mask.dropped() > 0, "seed {seed} ratio {ratio}: nothing pruned");
            let pruned = apply_surgery(&model, &mask).map_err(|e| e.to_string())?;
            let masked = zero_gamma(&model, &mask).map_err(|e| e.to_string())?;
            let d = pruned.forward(&x).unwrap().max_abs_diff(&masked.forward(&x).unwrap()).unwrap();
            worst = worst.max(d);
        }
    }
    ensure!(worst < 1e-5, "max abs diff {worst:.2e}");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.0} s");
    Ok(format!("30 pruned models, max abs diff {worst:.1e} (f32) in {secs:.2} s"))
}

// ---------------------------------------------------------------- 3

fn walk(cfg: &ModelConfig) -> (u64, u64) {
    let conv = |cin: u64, cout: u64, k: u64, hw: u64| (cout * cin * k * k + cout, 2 * cin * k * k * cout * hw + cout * hw);
    let [h, w] = cfg.input_grid;
    let mut hw = (h * w) as u64;
    let wd = cfg.width as u64;
    let c0 = 3 * (cfg.ray.points * (1 + 2 * cfg.ray.frequencies)) as u64;
    let (mut params, mut flops) = conv(c0, wd, 1, hw);
    for _ in 0..cfg.d_blocks {
        for _ in 0..2 {
            let (p, f) = conv(wd, wd, 1, hw);
            params += 2 * wd + p;
            flops += 4 * wd * hw + 8 * wd * hw + f;
        }
        flops += wd * hw;
    }
    let mut c = wd;
    for sr in &cfg.sr_blocks {
        let o = sr.out_channels as u64;
        hw *= (sr.scale * sr.scale) as u64;
        let (p1, f1) = conv(c, o, sr.kernel as u64, hw);
        let (p2, f2) = conv(o, o, 3, hw);
        params += p1 + 2 * o + p2;
        flops += f1 + 4 * o * hw + 8 * o * hw + f2;
        c = o;
    }
    let (p, f) = conv(c, 3, 1, hw);
    (params + p, flops + f + 12 * hw)
}

fn criterion_3() -> Outcome {
    let mut rng = Rng::new(3);
    for _ in 0..12 {
        let scales: Vec<usize> = (0..rng.below(4)).map(|_| 2 + rng.below(2)).collect();
        let mut cfg =
            ModelConfig::with_scales(1 + rng.below(5), 8 + 8 * rng.below(5), &scales, [2 + rng.below(8), 2 + rng.below(8)])
                .unwrap();
        cfg.ray.points = 1 + rng.below(4);
        cfg.ray.frequencies = rng.below(7);
        let m = build_model::<f32>(&cfg, &mut rng).unwrap();
        let got = (count_params(&m).total, count_flops(&m, cfg.input_grid).unwrap().total);
        ensure!(got == walk(&cfg), "{cfg:?}: {got:?} vs walker {:?}", walk(&cfg));
    }
    let conv = ConvParams::new(Tensor::<f32>::zeros([8, 4, 1, 1]).unwrap(), vec![0.0; 8], 1, 0).unwrap();
    let single = EnelfModel {
        config: ModelConfig::desk(),
        layers: vec![Layer {
            name: "conv".into(),
            kind: LayerKind::Conv(conv),
            prunable: false,
        }],
        mode: Mode::Infer,
    };
    let flops = count_flops(&single, [10, 10]).unwrap().total;
    ensure!(flops == 7200, "1x1 conv example gives {flops}");
    ensure!(count_params(&single).total == 40, "1x1 conv has 40 params");
    Ok("12 random configs match the walker; 1x1 conv 4->8 on 10x10 = 7200 FLOPs".into())
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let full = ModelConfig::d60_sr3();
    ensure!(full.output_size() == [800, 800], "100x100 renders {:?}", full.output_size());
    let ff = ModelConfig::d60_sr3_forward_facing();
    ensure!(ff.output_size() == [756, 1008], "84x63 renders {:?}", ff.output_size());
    let m = build_model::<f32>(&full, &mut Rng::new(0)).map_err(|e| e.to_string())?;
    let params = count_params(&m).total;
    let dev = params as f64 / 4.3e6 - 1.0;
    ensure!(dev.abs() <= 0.15, "params {params} off 4.3 M by {:.1}%", 100.0 * dev);
    let mb = model_size_mb(&m);
    ensure!((8.3 * 0.9..=8.8 * 1.1).contains(&mb), "size {mb:.2} MB");
    Ok(format!(
        "800x800 and 1008x756 outputs; {params} params ({:+.1}% vs 4.3 M), {mb:.2} MB",
        100.0 * dev
    ))
}

// ---------------------------------------------------------------- desk run

struct Desk {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    layout: Layout,
    secs: f64,
}

fn desk() -> Result<Desk, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let file = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    let out = dir.path().join("desk");
    let cfg = resolve(
        Some(&file),
        &[
            ("paths.out_dir".into(), out.to_string_lossy().into_owned()),
            ("prune.sweep".into(), "[0.3, 0.5, 0.7]".into()),
        ],
        None,
    )
    .map_err(|e| e.to_string())?;
    let layout = Layout::new(&cfg.paths);
    let start = Instant::now();
    run_pipeline(&cfg, &layout).map_err(|e| e.to_string())?;
    Ok(Desk {
        _dir: dir,
        cfg,
        layout,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn model_at(path: &Path) -> Result<EnelfModel<f32>, String> {
    load_checkpoint(path).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- 5

fn criterion_5(d: &Desk) -> Outcome {
    let mut params = Vec::new();
    let mut flops = Vec::new();
    for r in [0.3, 0.5, 0.7] {
        let rep: PruneReport = read_json(&d.layout.prune_report(r))?;
        if params.is_empty() {
            params.push(rep.params_before);
            flops.push(rep.flops_before);
        }
        params.push(rep.params_after);
        flops.push(rep.flops_after);
    }
    ensure!(params.windows(2).all(|w| w[1] < w[0]), "params not strictly decreasing: {params:?}");
    ensure!(flops.windows(2).all(|w| w[1] < w[0]), "FLOPs not strictly decreasing: {flops:?}");
    let base = model_at(&d.layout.baseline())?;
    let pruned = model_at(&d.layout.pruned(0.7))?;
    let bench = BenchConfig {
        warmup: 3,
        runs: 20,
        single_thread: true,
    };
    let grid = base.config.input_grid;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for _ in 0..5 {
        let a = bench_latency(&base, grid, &bench).map_err(|e| e.to_string())?.median_ms;
        let b = bench_latency(&pruned, grid, &bench).map_err(|e| e.to_string())?.median_ms;
        if b <= a {
            wins += 1;
        }
        pairs.push(format!("{a:.2}/{b:.2}"));
    }
    ensure!(wins >= 4, "r=0.7 faster in only {wins}/5 sessions (ms r0/r0.7: {})", pairs.join(" "));
    Ok(format!(
        "params {params:?}, FLOPs {flops:?}; r=0.7 faster in {wins}/5 sessions (median ms r0/r0.7: {})",
        pairs.join(" ")
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_6(d: &Desk) -> Outcome {
    let base: EvalReport = read_json(&d.layout.eval_report("baseline"))?;
    let mut tuned = Vec::new();
    for r in [0.3, 0.5, 0.7] {
        let rep: EvalReport = read_json(&d.layout.eval_report(&format!("r{r:.2}")))?;
        tuned.push(rep.mean_psnr);
    }
    let detail = format!(
        "baseline {:.2} dB, finetuned r0.3/0.5/0.7 {:.2}/{:.2}/{:.2} dB, pipeline {:.0} s",
        base.mean_psnr, tuned[0], tuned[1], tuned[2], d.secs
    );
    ensure!(base.mean_psnr >= 25.0, "baseline below 25 dB: {detail}");
    ensure!(tuned.windows(2).all(|w| w[1] <= w[0]), "PSNR rises with ratio: {detail}");
    ensure!(base.mean_psnr - tuned[1] <= 4.0, "r=0.5 drop above 4 dB: {detail}");
    ensure!(d.secs < 1800.0, "over 30 minutes: {detail}");
    Ok(detail)
}

fn training_loss_check(d: &Desk) -> Outcome {
    let text = std::fs::read_to_string(d.layout.reports.join("train_log.csv")).map_err(|e| e.to_string())?;
    let losses: Vec<f64> = text.lines().skip(1).filter_map(|l| l.split(',').nth(1)?.parse().ok()).collect();
    let (first, last) = (losses[0], *losses.last().unwrap());
    ensure!(last < first / 10.0, "loss {first:.4} -> {last:.4}");
    Ok(format!("train loss {first:.4} -> {last:.5} ({:.0}x)", first / last))
}

// ---------------------------------------------------------------- 7

fn criterion_7(d: &Desk) -> Outcome {
    let base = model_at(&d.layout.baseline())?;
    let ds = load_dataset(&d.layout.data.train).map_err(|e| e.to_string())?;
    let mut control = build_model::<f32>(&d.cfg.model, &mut Rng::new(d.cfg.train.seed)).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        sparsity_lambda: 0.0,
        ..d.cfg.train.clone()
    };
    let data = TrainData::new(&d.cfg.model, &ds).map_err(|e| e.to_string())?;
    train_loop(&mut control, &data, &tc, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let (with, without) = (median_abs_gamma(&base), median_abs_gamma(&control));
    ensure!(with < without, "median |gamma| {with:.4} (lambda 1e-4) vs {without:.4} (lambda 0)");
    Ok(format!(
        "median |gamma| {with:.4} with lambda {} vs {without:.4} for the lambda=0 control",
        d.cfg.train.sparsity_lambda
    ))
}

// ---------------------------------------------------------------- 8

fn bits_mask(bits: &[bool]) -> PruneMask {
    PruneMask {
        ratio: 0.5,
        threshold: 0.0,
        layers: vec![LayerMask {
            layer: 0,
            name: "l".into(),
            keep: bits.to_vec(),
        }],
    }
}

fn history(masks: impl IntoIterator<Item = PruneMask>) -> MaskHistory {
    let mut h = MaskHistory::default();
    for (i, m) in masks.into_iter().enumerate() {
        h.push(i * 100, m).unwrap();
    }
    h
}

fn criterion_8() -> Outcome {
    let fixed = bits_mask(&[true, false, true, false]);
    let same = ebt_detect(&history(vec![fixed.clone(); 6]), 0.05, 3).map_err(|e| e.to_string())?;
    ensure!(same.map(|f| f.snapshot) == Some(2), "identical history: {same:?}");
    let other = bits_mask(&[false, true, false, true]);
    let alt = (0..12).map(|i| if i % 2 == 0 { fixed.clone() } else { other.clone() });
    let osc = ebt_detect(&history(alt), 0.05, 3).map_err(|e| e.to_string())?;
    ensure!(osc.is_none(), "oscillating history: {osc:?}");
    let late = (0..12).map(|i| {
        let mut bits = vec![true; 40];
        if i < 7 {
            bits[4 * i..4 * i + 4].iter_mut().for_each(|b| *b = false);
        }
        bits_mask(&bits)
    });
    let found = ebt_detect(&history(late), 0.05, 3).map_err(|e| e.to_string())?;
    ensure!(found.map(|f| f.snapshot) == Some(9), "converging-late history: {found:?}");
    Ok("identical -> 2, oscillating -> none, converging at 7 (t=3, eps=0.05) -> 9".into())
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut cfg = ModelConfig::with_scales(2, 16, &[2], [8, 8]).unwrap();
    cfg.sparsity_init = true;
    let k = Intrinsics::centered(16, 16, 22.0).unwrap();
    let ds = render_dataset(&Scene::lego_lite(), 8, &k, 0, &Orbit::default()).map_err(|e| e.to_string())?;
    let data = TrainData::<f32>::new(&cfg, &ds).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        iters: 20,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = build_model::<f32>(&cfg, &mut Rng::new(tc.seed)).unwrap();
        train_loop(&mut m, &data, &tc, &TrainOptions::default()).unwrap();
        encode_checkpoint(&m).unwrap()
    };
    let ckpt = run();
    ensure!(ckpt == run(), "same seed gave different checkpoints");
    let back: EnelfModel<f32> = decode_checkpoint(&ckpt).map_err(|e| e.to_string())?;
    ensure!(encode_checkpoint(&back).unwrap() == ckpt, "checkpoint round trip not bit-exact");
    let bytes = encode_dataset(&ds).map_err(|e| e.to_string())?;
    let ds_back = decode_dataset(&bytes).map_err(|e| e.to_string())?;
    ensure!(ds_back == ds && encode_dataset(&ds_back).unwrap() == bytes, "dataset round trip not bit-exact");
    let mut bad = ckpt.clone();
    let n = bad.len();
    bad[n - 8] ^= 1;
    ensure!(
        matches!(decode_checkpoint::<f32>(&bad), Err(Error::Format(FormatError::Checksum { .. }))),
        "corrupted checkpoint accepted"
    );
    let mut bad = bytes;
    let n = bad.len();
    bad[n - 16] ^= 1;
    ensure!(
        matches!(decode_dataset(&bad), Err(Error::Format(FormatError::Checksum { .. }))),
        "corrupted dataset accepted"
    );
    Ok("identical checkpoints from one seed; checkpoint and dataset bytes round-trip; flipped bytes fail the checksum".into())
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let c = |v: f64| Tensor::<f64>::full([1, 3, 16, 16], v).unwrap();
    let cases = [
        ("psnr(mse 0.01)", psnr_from_mse(0.01), 20.0),
        ("psnr(0 vs 1)", psnr(&c(0.0), &c(1.0)).unwrap(), 0.0),
        ("ssim(identical)", ssim(&c(0.4), &c(0.4)).unwrap(), 1.0),
        ("ssim(0 vs 1)", ssim(&c(0.0), &c(1.0)).unwrap(), 1e-4 / (1.0 + 1e-4)),
    ];
    for (name, got, want) in cases {
        ensure!((got - want).abs() < 1e-6, "{name} = {got}, expected {want}");
    }
    ensure!(psnr(&c(0.3), &c(0.3)).unwrap() == 100.0, "identical images should clamp to 100 dB");
    Ok(format!("20 dB, 0 dB, SSIM 1.0, SSIM {:.4e} on constants", cases[3].1))
}

// ---------------------------------------------------------------- driver

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let wanted = |id: &str| filter.is_empty() || filter.iter().any(|f| id.contains(f.as_str()));
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    let mut report = |id: &'static str, name: &'static str, outcome: Outcome| {
        let tag = if outcome.is_ok() { "PASS" } else { "FAIL" };
        let detail = match &outcome {
            Ok(s) | Err(s) => s.clone(),
        };
        println!("acceptance {id:<3} {tag}  {name}: {detail}");
        results.push((id, name, outcome));
    };

    let quick: [(&str, &str, fn() -> Outcome); 6] = [
        ("1", "gradient suite", criterion_1),
        ("2", "surgery equivalence", criterion_2),
        ("3", "accounting oracle", criterion_3),
        ("4", "full-scale shapes", criterion_4),
        ("8", "early-bird detector", criterion_8),
        ("9", "determinism and formats", criterion_9),
    ];
    for (id, name, f) in quick {
        if wanted(id) {
            report(id, name, guarded(f));
        }
    }
    if wanted("10") {
        report("10", "metric units", guarded(criterion_10));
    }

    let desk_ids = ["5", "6", "6b", "7"];
    let desk_run = if desk_ids.iter().any(|id| wanted(id)) { Some(catch_unwind(desk).unwrap_or_else(|_| Err("panicked".into()))) } else { None };
    if let Some(run) = desk_run {
        match run {
            Ok(d) => {
                report("5", "compression trend", guarded(|| criterion_5(&d)));
                report("6", "quality trend", guarded(|| criterion_6(&d)));
                report("6b", "baseline training loss drops 10x", guarded(|| training_loss_check(&d)));
                report("7", "sparsity effect", guarded(|| criterion_7(&d)));
            }
            Err(e) => {
                for (id, name) in [("5", "compression trend"), ("6", "quality trend"), ("7", "sparsity effect")] {
                    report(id, name, Err(format!("desk pipeline failed: {e}")));
                }
            }
        }
    }

    let failed: Vec<&str> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
