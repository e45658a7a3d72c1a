use enelf::model::{build_model, count_flops, count_params, EnelfModel, LayerKind, ModelConfig};
use enelf::nn::{Dist, Rng, Scalar, Tensor};
use enelf::prune::{apply_surgery, compute_mask, layer_floor, prune, zero_gamma, LayerMask, PruneMask};
use proptest::prelude::*;

/// D2-SR1 model with every batch norm randomized so pruning has something
/// non-trivial to fold.
fn random_model<T: Scalar>(seed: u64) -> EnelfModel<T> {
    let mut rng = Rng::new(seed);
    let width = 8 + 4 * rng.below(5);
    let grid = 3 + rng.below(4);
    let mut cfg = ModelConfig::with_scales(2, width, &[2], [grid, grid]).unwrap();
    cfg.ray.points = 1 + rng.below(3);
    cfg.ray.frequencies = rng.below(4);
    let mut model = build_model::<T>(&cfg, &mut rng).unwrap();
    for layer in &mut model.layers {
        if let LayerKind::Bn(p) = &mut layer.kind {
            for c in 0..p.channels() {
                p.gamma[c] = T::from_f64_lossy(rng.normal());
                p.beta[c] = T::from_f64_lossy(0.5 * rng.normal());
                p.running_mean[c] = T::from_f64_lossy(0.3 * rng.normal());
                p.running_var[c] = T::from_f64_lossy(rng.uniform_in(0.2, 2.0));
            }
        }
    }
    model
}

fn ray_grid<T: Scalar>(model: &EnelfModel<T>, rng: &mut Rng) -> Tensor<T> {
    let [h, w] = model.config.input_grid;
    Tensor::random([2, model.input_channels(), h, w], rng, Dist::Uniform(-1.0, 1.0)).unwrap()
}

fn surgery_gap<T: Scalar>(seed: u64, ratio: f64) -> f64 {
    let model = random_model::<T>(seed);
    let mask = compute_mask(&model, ratio).unwrap();
    let masked = zero_gamma(&model, &mask).unwrap();
    let pruned = apply_surgery(&model, &mask).unwrap();
    let mut rng = Rng::new(seed ^ 0xabcd);
    (0..10)
        .map(|_| {
            let x = ray_grid(&model, &mut rng);
            let a = pruned.forward(&x).unwrap();
            let b = masked.forward(&x).unwrap();
            a.max_abs_diff(&b).unwrap()
        })
        .fold(0.0, f64::max)
}

#[test]
fn surgery_matches_masked_model_f32() {
    for seed in 0..10 {
        for ratio in [0.3, 0.5, 0.7] {
            let gap = surgery_gap::<f32>(seed, ratio);
            assert!(gap < 1e-5, "seed {seed} ratio {ratio}: gap {gap}");
        }
    }
}

#[test]
fn surgery_matches_masked_model_f64() {
    for seed in 0..10 {
        for ratio in [0.3, 0.5, 0.7] {
            let gap = surgery_gap::<f64>(seed, ratio);
            assert!(gap < 1e-10, "seed {seed} ratio {ratio}: gap {gap}");
        }
    }
}

#[test]
fn empty_mask_leaves_model_bit_identical() {
    let model = random_model::<f32>(3);
    let mask = compute_mask(&model, 0.0).unwrap();
    assert_eq!(mask.dropped(), 0);
    let pruned = apply_surgery(&model, &mask).unwrap();
    assert_eq!(pruned, model);
    let x = ray_grid(&model, &mut Rng::new(1));
    assert_eq!(pruned.forward(&x).unwrap(), model.forward(&x).unwrap());
}

/// A model whose only prunable batch norm has exactly the given scales.
fn single_layer_model(gammas: &[f64]) -> EnelfModel<f64> {
    let cfg = ModelConfig::with_scales(1, 8, &[], [2, 2]).unwrap();
    let mut model = build_model::<f64>(&cfg, &mut Rng::new(0)).unwrap();
    let bn = model.prunable_bn_indices()[0];
    let width = 8;
    let keep: Vec<bool> = (0..width).map(|c| c < gammas.len()).collect();
    let mask = PruneMask {
        ratio: 0.0,
        threshold: 0.0,
        layers: vec![LayerMask {
            layer: bn,
            name: model.layers[bn].name.clone(),
            keep,
        }],
    };
    model = apply_surgery(&model, &mask).unwrap();
    if let LayerKind::Bn(p) = &mut model.layers[bn].kind {
        p.gamma = gammas.to_vec();
    }
    model
}

#[test]
fn four_channel_example_drops_the_two_smallest() {
    let model = single_layer_model(&[0.9, 0.05, 0.5, 0.1]);
    let mask = compute_mask(&model, 0.5).unwrap();
    assert_eq!(mask.layers[0].keep, vec![true, false, true, false]);
    assert_eq!(mask.threshold, 0.1);
}

#[test]
fn equal_scales_drop_by_channel_index() {
    let model = single_layer_model(&[0.3; 7]);
    let mask = compute_mask(&model, 0.5).unwrap();
    // ceil(0.5 * 7) = 4, lowest channel indices first.
    assert_eq!(mask.layers[0].keep, vec![false, false, false, false, true, true, true]);
}

#[test]
fn compression_is_strictly_monotone() {
    let model = random_model::<f32>(11);
    let grid = model.config.input_grid;
    let mut last = (count_params(&model).total, count_flops(&model, grid).unwrap().total);
    for ratio in [0.3, 0.5, 0.7] {
        let (pruned, _, report) = prune(&model, ratio).unwrap();
        let now = (count_params(&pruned).total, count_flops(&pruned, grid).unwrap().total);
        assert!(now.0 < last.0 && now.1 < last.1, "ratio {ratio}: {now:?} vs {last:?}");
        assert_eq!((report.params_after, report.flops_after), now);
        last = now;
    }
}

#[test]
fn pruned_model_is_stable_under_zero_ratio() {
    let model = random_model::<f64>(5);
    let (pruned, _, _) = prune(&model, 0.5).unwrap();
    let (again, mask, _) = prune(&pruned, 0.0).unwrap();
    assert_eq!(mask.dropped(), 0);
    assert_eq!(again, pruned);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mask_respects_count_and_floors(seed in 0u64..10_000, ratio in 0.0f64..0.95) {
        let model = random_model::<f64>(seed);
        let mask = compute_mask(&model, ratio).unwrap();
        let total = mask.total();
        let k = (ratio * total as f64 - 1e-9).ceil().max(0.0) as usize;
        prop_assert!(mask.dropped() <= k);
        for l in &mask.layers {
            let floor = layer_floor(l.keep.len());
            prop_assert!(l.kept() >= floor);
            let g = model.layers[l.layer].as_bn().unwrap();
            for (c, &keep) in l.keep.iter().enumerate() {
                let a = g.gamma[c].abs();
                if !keep {
                    prop_assert!(a <= mask.threshold);
                } else if a < mask.threshold {
                    // Only a layer already at its floor may keep a channel
                    // that ranks below the cut.
                    prop_assert_eq!(l.kept(), floor);
                }
            }
        }
    }

    #[test]
    fn surgery_never_adds_parameters(seed in 0u64..10_000, ratio in 0.0f64..0.95) {
        let model = random_model::<f32>(seed);
        let (pruned, mask, _) = prune(&model, ratio).unwrap();
        let before = count_params(&model).total;
        let after = count_params(&pruned).total;
        prop_assert!(after <= before);
        prop_assert_eq!(after == before, mask.dropped() == 0);
    }
}
