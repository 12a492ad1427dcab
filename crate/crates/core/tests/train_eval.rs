mod support;

use hskan_core::data::{generate_synthetic, stratified_split, HsiCube, Subset, SynthParams};
use hskan_core::metrics::{argmax, ConfusionMatrix};
use hskan_core::model::{build_hybrid_kan, ModelConfig};
use hskan_core::optim::{adam_step, Adam, AdamConfig};
use hskan_core::train::{evaluate, predict_map, train, Dataset, FrozenClock, Preprocessor, TrainConfig};
use hskan_core::{Error, Tape, Tensor};
use proptest::prelude::*;
use support::{cross_entropy_oracle, random_tensor, rng};

#[test]
fn hand_checked_metrics() {
    let m = ConfusionMatrix::from_counts(2, vec![45, 5, 10, 40]).unwrap();
    let s = m.metrics().unwrap();
    assert!((s.overall_accuracy - 0.85).abs() < 1e-12);
    assert!((s.average_accuracy - 0.85).abs() < 1e-12);
    assert!((m.chance_agreement() - 0.5).abs() < 1e-12);
    assert!((s.kappa - 0.70).abs() < 1e-12);
    assert_eq!(format!("{:.2}", 100.0 * s.kappa), "70.00");
}

#[test]
fn degenerate_matrices() {
    let diag = ConfusionMatrix::from_counts(3, vec![4, 0, 0, 0, 7, 0, 0, 0, 2]).unwrap().metrics().unwrap();
    assert_eq!((diag.overall_accuracy, diag.average_accuracy, diag.kappa), (1.0, 1.0, 1.0));
    let absent = ConfusionMatrix::from_counts(2, vec![50, 0, 0, 0]).unwrap().metrics().unwrap();
    assert_eq!(absent.average_accuracy, 1.0);
    assert_eq!(absent.per_class[1], None);
    assert!(matches!(ConfusionMatrix::new(3).metrics(), Err(Error::Data(_))));
}

#[test]
fn argmax_prefers_lowest_index() {
    assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
    assert_eq!(argmax(&[2.0, 2.0]), 0);
}

proptest! {
    #[test]
    fn matrix_equals_pairs(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let from_pairs = ConfusionMatrix::from_pairs(4, pairs.iter().copied()).unwrap();
        let mut counts = vec![0u64; 16];
        for &(t, p) in &pairs {
            counts[t * 4 + p] += 1;
        }
        let direct = ConfusionMatrix::from_counts(4, counts).unwrap();
        prop_assert_eq!(from_pairs.metrics().unwrap(), direct.metrics().unwrap());
        let oa = pairs.iter().filter(|(t, p)| t == p).count() as f64 / pairs.len() as f64;
        prop_assert!((from_pairs.overall_accuracy() - oa).abs() < 1e-15);
        if oa >= from_pairs.chance_agreement() {
            prop_assert!(from_pairs.kappa() <= oa + 1e-12);
        }
    }
}

#[test]
fn cross_entropy_examples() {
    let mut t = Tape::new();
    let flat = t.constant(Tensor::zeros(&[3, 4]).unwrap());
    let l = t.cross_entropy(flat, &[0, 1, 3]).unwrap();
    assert!((t.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-12);

    let logits = random_tensor(&mut rng(1), &[7, 5], -4.0, 4.0);
    let targets = [0, 4, 1, 1, 2, 3, 0];
    let v = t.constant(logits.clone());
    let l = t.cross_entropy(v, &targets).unwrap();
    assert!((t.value(l).item().unwrap() - cross_entropy_oracle(&logits, &targets)).abs() < 1e-10);

    let sharp = t.constant(Tensor::new(&[1, 3], vec![20.0, 0.0, 0.0]).unwrap());
    let l = t.cross_entropy(sharp, &[0]).unwrap();
    assert!(t.value(l).item().unwrap() < 1e-3);
    assert!(matches!(t.cross_entropy(sharp, &[3]), Err(Error::Data(_))));
}

#[test]
fn adam_examples() {
    let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
    let mut s = Adam::new(AdamConfig::default());
    adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
    assert_eq!(p.data(), &[1.0, -2.0, 0.5]);

    let mut p = Tensor::new(&[2], vec![0.0, 0.0]).unwrap();
    let mut s = Adam::new(AdamConfig::default());
    adam_step(&mut p, &[3.0, -0.01], &mut s).unwrap();
    assert!(p.data()[0] < 0.0 && p.data()[1] > 0.0);

    let mut x = Tensor::new(&[1], vec![1.0]).unwrap();
    let mut s = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
    let mut prev = 1.0f64;
    for _ in 0..10 {
        let g = 2.0 * x.data()[0];
        adam_step(&mut x, &[g], &mut s).unwrap();
        assert!(x.data()[0].abs() < prev.abs());
        prev = x.data()[0];
    }
    assert!(matches!(adam_step(&mut x, &[1.0, 2.0], &mut s), Err(Error::Contract(_))));
}

fn small_cfg(depth: usize, classes: usize) -> ModelConfig {
    ModelConfig {
        window: 5,
        pca_components: depth,
        num_classes: classes,
        channels_3d: vec![4, 4, 4],
        channels_2d: 8,
        hidden_1d: 8,
        pool_window: 3,
        pool_stride: 3,
        ..ModelConfig::default()
    }
}

/// Two classes split by the sign of the first spectral feature.
fn separable(seed: u64, n: usize) -> Dataset {
    let mut r = rng(seed);
    let mut patches = Vec::new();
    let mut targets = Vec::new();
    for i in 0..n {
        let class = i % 2;
        let mut p = random_tensor(&mut r, &[1, 5, 5, 2], -0.3, 0.3);
        let shift = if class == 0 { -0.6 } else { 0.6 };
        for px in p.data_mut().chunks_mut(2) {
            px[0] += shift;
        }
        patches.push(p);
        targets.push(class);
    }
    Dataset::from_patches(&patches, &targets).unwrap()
}

#[test]
fn separable_patches_are_learned() {
    let data = separable(2, 64);
    let cfg = TrainConfig { epochs: 10, batch_size: 16, seed: 3, ..TrainConfig::default() };
    let m = build_hybrid_kan(&small_cfg(2, 2)).unwrap();
    let out = train(m, &data, &data, &cfg, &mut FrozenClock, &mut |_| {}).unwrap();
    let acc = out.log.rows.iter().map(|r| r.train_acc).fold(0.0, f64::max);
    assert!(acc >= 0.99, "{:?}", out.log.rows);
    assert!(evaluate(&out.model, &data, 32).unwrap().metrics.overall_accuracy >= 0.99);
}

#[test]
fn training_is_deterministic() {
    let data = separable(4, 24);
    let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 5, ..TrainConfig::default() };
    let run = || {
        let m = build_hybrid_kan(&small_cfg(2, 2)).unwrap();
        train(m, &data, &data, &cfg, &mut FrozenClock, &mut |_| {}).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
    assert_eq!(a.best.epoch, b.best.epoch);
}

#[test]
fn best_checkpoint_has_minimum_val_loss() {
    let data = separable(6, 24);
    let cfg = TrainConfig { epochs: 4, batch_size: 8, seed: 7, ..TrainConfig::default() };
    let m = build_hybrid_kan(&small_cfg(2, 2)).unwrap();
    let out = train(m, &data, &data, &cfg, &mut FrozenClock, &mut |_| {}).unwrap();
    let min = out.log.rows.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best.best_val_loss, min);
    assert_eq!(out.log.rows[out.best.epoch - 1].val_loss, min);
}

#[test]
fn divergence_keeps_last_good_checkpoint() {
    let data = separable(8, 16);
    let cfg =
        TrainConfig { epochs: 5, batch_size: 8, seed: 9, adam: AdamConfig { lr: 1e300, ..AdamConfig::default() } };
    let m = build_hybrid_kan(&small_cfg(2, 2)).unwrap();
    match train(m, &data, &data, &cfg, &mut FrozenClock, &mut |_| {}) {
        Err(abort) => {
            assert!(matches!(abort.error, Error::Numeric { .. }), "{:?}", abort.error);
            assert!(abort.last_good.model.params().iter().all(|p| p.all_finite()));
        }
        Ok(out) => panic!("expected divergence, got {:?}", out.log.rows),
    }
}

#[test]
fn prediction_map_examples() {
    let (cube, labels) =
        generate_synthetic(&SynthParams { height: 24, width: 24, bands: 6, classes: 3, noise_sigma: 0.0, seed: 11 })
            .unwrap();
    // Noiseless classes span only C distinct spectra, so D <= C − 1.
    let pre = Preprocessor::fit(&cube, 2).unwrap();
    let reduced = pre.apply(&cube).unwrap();
    let split = stratified_split(&labels, 12).unwrap();
    let tr = Dataset::from_split(&reduced, &labels, &split, Subset::Train, 5).unwrap();
    let va = Dataset::from_split(&reduced, &labels, &split, Subset::Val, 5).unwrap();
    let cfg = TrainConfig { epochs: 15, batch_size: 32, seed: 13, ..TrainConfig::default() };
    let out =
        train(build_hybrid_kan(&small_cfg(2, 3)).unwrap(), &tr, &va, &cfg, &mut FrozenClock, &mut |_| {}).unwrap();
    let map = predict_map(&out.best.model, &cube, &pre, 128).unwrap();
    let agree = map.labels.labels().iter().zip(labels.labels()).filter(|(a, b)| a == b).count();
    assert!(agree * 100 >= 95 * cube.pixels(), "{agree} of {}", cube.pixels());
    assert!(map.confidence.iter().all(|&c| c > 0.0 && c <= 1.0));

    let one = HsiCube::new(1, 1, 6, cube.pixel(3, 3).to_vec()).unwrap();
    let single = predict_map(&out.best.model, &one, &pre, 8).unwrap();
    assert_eq!((single.labels.height(), single.labels.width()), (1, 1));

    let twice = predict_map(&out.best.model, &cube, &pre, 50).unwrap();
    assert_eq!(twice, map);

    let wrong = HsiCube::new(1, 1, 5, vec![0.0; 5]).unwrap();
    assert!(matches!(predict_map(&out.best.model, &wrong, &pre, 8), Err(Error::Config(_))));
    let fresh = build_hybrid_kan(&small_cfg(2, 3)).unwrap();
    assert!(matches!(predict_map(&fresh, &cube, &pre, 8), Err(Error::State(_))));
}

#[test]
fn evaluate_rejects_empty_split() {
    let mut m = build_hybrid_kan(&small_cfg(2, 2)).unwrap();
    m.init(&mut rng(14));
    let labels = hskan_core::data::LabelRaster::new(1, 2, vec![0, 0]).unwrap();
    let cube = HsiCube::new(1, 2, 2, vec![0.0; 4]).unwrap();
    let empty = Dataset::from_scene(&cube, &labels, &[], 5).unwrap();
    assert!(matches!(evaluate(&m, &empty, 8), Err(Error::Data(_))));
}
