use enelf::model::{build_model, count_flops, count_params, model_size_mb, size_mb_for_params, ModelConfig};
use enelf::nn::Rng;

/// Independent tally straight from the architecture description.
fn walk(cfg: &ModelConfig) -> (u64, u64) {
    let conv = |cin: u64, cout: u64, k: u64, hw: u64| (cout * cin * k * k + cout, 2 * cin * k * k * cout * hw + cout * hw);
    let bn = |c: u64, hw: u64| (2 * c, 4 * c * hw);
    let gelu = |c: u64, hw: u64| 8 * c * hw;
    let [h, w] = cfg.input_grid;
    let mut hw = (h * w) as u64;
    let width = cfg.width as u64;
    let c0 = 3 * (cfg.ray.points * (1 + 2 * cfg.ray.frequencies)) as u64;
    let (mut params, mut flops) = conv(c0, width, 1, hw);
    for _ in 0..cfg.d_blocks {
        for _ in 0..2 {
            let (p, f) = bn(width, hw);
            let (cp, cf) = conv(width, width, 1, hw);
            params += p + cp;
            flops += f + gelu(width, hw) + cf;
        }
        flops += width * hw;
    }
    let mut c = width;
    for sr in &cfg.sr_blocks {
        let out = sr.out_channels as u64;
        hw *= (sr.scale * sr.scale) as u64;
        let (p, f) = conv(c, out, sr.kernel as u64, hw);
        let (bp, bf) = bn(out, hw);
        let (cp, cf) = conv(out, out, 3, hw);
        params += p + bp + cp;
        flops += f + bf + gelu(out, hw) + cf;
        c = out;
    }
    let (p, f) = conv(c, 3, 1, hw);
    (params + p, flops + f + 4 * 3 * hw)
}

#[test]
fn counts_agree_with_brute_force_walker() {
    let mut rng = Rng::new(42);
    for _ in 0..16 {
        let d = 1 + rng.below(6);
        let width = 8 + 8 * rng.below(6);
        let scales: Vec<usize> = (0..rng.below(4)).map(|_| 2 + rng.below(2)).collect();
        let grid = [2 + rng.below(10), 2 + rng.below(10)];
        let mut cfg = ModelConfig::with_scales(d, width, &scales, grid).unwrap();
        cfg.ray.points = 1 + rng.below(5);
        cfg.ray.frequencies = rng.below(8);
        let model = build_model::<f32>(&cfg, &mut rng).unwrap();
        let (params, flops) = walk(&cfg);
        assert_eq!(count_params(&model).total, params, "{cfg:?}");
        assert_eq!(count_flops(&model, grid).unwrap().total, flops, "{cfg:?}");
    }
}

#[test]
fn desk_config_totals() {
    let cfg = ModelConfig::desk();
    let model = build_model::<f32>(&cfg, &mut Rng::new(0)).unwrap();
    assert_eq!(count_params(&model).total, walk(&cfg).0);
    assert_eq!(count_params(&model).total, 40_019);
}

#[test]
fn full_scale_shapes_and_size() {
    let full = ModelConfig::d60_sr3();
    assert_eq!(full.output_size(), [800, 800]);
    let ff = ModelConfig::d60_sr3_forward_facing();
    assert_eq!(ff.output_size(), [756, 1008]);
    let model = build_model::<f32>(&full, &mut Rng::new(0)).unwrap();
    let params = count_params(&model).total as f64;
    assert!((params / 4.3e6 - 1.0).abs() <= 0.15, "params {params}");
    let mb = model_size_mb(&model);
    assert!((8.3 * 0.9..=8.8 * 1.1).contains(&mb), "size {mb} MB");
}

#[test]
fn size_examples() {
    assert!((size_mb_for_params(4_300_000) - 8.6).abs() < 1e-12);
    assert_eq!(size_mb_for_params(0), 0.0);
    assert!((size_mb_for_params(1_550_000) / 3.3 - 1.0).abs() <= 0.1);
}
