use super::*;
use crate::dataio::{synth_generate, Dims, SynthConfig};
use crate::model::{Direction, HyperParams};
use crate::numcore::{DType, ParamStore, Tensor};

fn toy_sets(n: usize) -> (Dataset, Dataset) {
    let mut cfg = SynthConfig::new(7, n, 1, Dims::TOY);
    cfg.val_images = n;
    let d = synth_generate(&cfg).unwrap();
    (d.train, d.val)
}

fn toy_model(seed: u64) -> HireModel {
    let hyper = HyperParams {
        dtype: DType::F32,
        ..HyperParams::toy(Direction::ImageToText)
    };
    HireModel::new(hyper, Dims::TOY.region_dim, Dims::TOY.word_dim, seed).unwrap()
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 5e-3,
        epochs,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

fn values(m: &HireModel) -> Vec<(String, Vec<f64>)> {
    m.store.iter().map(|(n, t)| (n.to_string(), t.data().to_vec())).collect()
}

#[test]
fn step_decay_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0), 2e-4);
    assert_eq!(cfg.lr_at(14), 2e-4);
    approx::assert_relative_eq!(cfg.lr_at(15), 2e-5, max_relative = 1e-12);
    approx::assert_relative_eq!(cfg.lr_at(29), 2e-5, max_relative = 1e-12);
    approx::assert_relative_eq!(cfg.lr_at(30), 2e-6, max_relative = 1e-12);
}

#[test]
fn first_adam_step_moves_by_lr() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::vector(&[1.0, 2.0])).unwrap();
    store.get_mut("w").unwrap().accumulate_grad(&[1.0, 0.0]).unwrap();
    let mut opt = Adam::new(AdamConfig::default());
    opt.step(&mut store, 0.1).unwrap();
    let w = store.get("w").unwrap();
    // m̂ = 1, v̂ = 1 for the first coordinate; the second has zero gradient.
    approx::assert_relative_eq!(w.data()[0], 1.0 - 0.1 / (1.0 + 1e-8), epsilon = 1e-15);
    assert_eq!(w.data()[1], 2.0);
    assert!(w.grad().unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn second_adam_step_matches_hand_values() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::scalar(0.0)).unwrap();
    let mut opt = Adam::new(AdamConfig::default());
    for g in [2.0, -1.0] {
        store.get_mut("w").unwrap().accumulate_grad(&[g]).unwrap();
        opt.step(&mut store, 0.01).unwrap();
    }
    // Independent evaluation of the two bias-corrected updates.
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let (m1, v1) = ((1.0 - b1) * 2.0, (1.0 - b2) * 4.0);
    let u1 = 0.01 * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
    let (m2, v2) = (b1 * m1 + (1.0 - b1) * -1.0, b2 * v1 + (1.0 - b2) * 1.0);
    let u2 = 0.01 * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
    approx::assert_relative_eq!(store.get("w").unwrap().item(), -u1 - u2, epsilon = 1e-15);
}

#[test]
fn non_finite_gradient_names_the_parameter() {
    let mut store = ParamStore::new();
    store.insert("proj.image", Tensor::vector(&[1.0, 1.0])).unwrap();
    store.get_mut("proj.image").unwrap().accumulate_grad(&[0.0, f64::NAN]).unwrap();
    let err = Adam::new(AdamConfig::default()).step(&mut store, 0.1).unwrap_err();
    assert!(matches!(&err, HireError::NonFinite(m) if m.contains("proj.image")), "{err}");
    assert_eq!(store.get("proj.image").unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn clipping_bounds_the_global_norm() {
    let mut store = ParamStore::new();
    store.insert("a", Tensor::vector(&[0.0])).unwrap();
    store.insert("b", Tensor::vector(&[0.0])).unwrap();
    store.get_mut("a").unwrap().accumulate_grad(&[3.0]).unwrap();
    store.get_mut("b").unwrap().accumulate_grad(&[4.0]).unwrap();
    assert_eq!(clip_grad_norm(&mut store, 1.0), 5.0);
    approx::assert_relative_eq!(grad_norm(&store), 1.0, epsilon = 1e-15);
    approx::assert_relative_eq!(store.get("a").unwrap().grad().unwrap()[0], 0.6, epsilon = 1e-15);
}

#[test]
fn config_rejects_bad_values() {
    for cfg in [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 1, ..TrainConfig::default() },
        TrainConfig { mask_rate: 1.0, ..TrainConfig::default() },
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { grad_clip: Some(-1.0), ..TrainConfig::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(HireError::Config(_))), "{cfg:?}");
    }
    let err = serde_json::from_str::<TrainConfig>(r#"{"lr": 1e-3, "learning_rate": 1}"#).unwrap_err();
    assert!(err.to_string().contains("learning_rate"));
}

#[test]
fn training_reduces_the_loss() {
    let (tr, _) = toy_sets(8);
    let mut model = toy_model(1);
    let out = train(&mut model, &tr, None, &quick_cfg(25), None).unwrap();
    let first = out.log.first().unwrap().loss;
    let last = out.log.last().unwrap().loss;
    assert!(last < first, "{first} -> {last}");
    assert_eq!(out.steps, 25 * 2);
    for r in &out.log {
        approx::assert_relative_eq!(r.loss, r.loss_rank + r.loss_add, max_relative = 1e-6);
    }
}

#[test]
fn runs_are_deterministic_and_logged() {
    let (tr, va) = toy_sets(8);
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let mut model = toy_model(3);
        let cfg = TrainConfig { extra_negatives: true, grad_clip: Some(10.0), ..quick_cfg(3) };
        let out = train(&mut model, &tr, Some(&va), &cfg, Some(&dir.path().join(sub))).unwrap();
        (model, out)
    };
    let (m1, o1) = run("a");
    let (m2, o2) = run("b");
    assert_eq!(o1.log, o2.log);
    assert_eq!(m1.store, m2.store);
    let a = std::fs::read(dir.path().join("a").join(METRICS_FILE)).unwrap();
    let b = std::fs::read(dir.path().join("b").join(METRICS_FILE)).unwrap();
    assert_eq!(a, b);
    let lines: Vec<EpochRecord> = String::from_utf8(a)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines, o1.log);
    assert!(lines.iter().all(|r| r.val.is_some()));
    assert_eq!(lines.iter().filter(|r| r.best).count() >= 1, true);
    assert!(dir.path().join("a").join(BEST_CHECKPOINT).exists());
    let last = load_checkpoint(&dir.path().join("a").join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(values(&last), values(&m1));
}

#[test]
fn max_steps_stops_early() {
    let (tr, _) = toy_sets(8);
    let mut model = toy_model(1);
    let cfg = TrainConfig { max_steps: Some(3), ..quick_cfg(10) };
    let out = train(&mut model, &tr, None, &cfg, None).unwrap();
    assert_eq!(out.steps, 3);
    assert_eq!(out.log.len(), 2);
}

#[test]
fn warm_start_copies_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let src = toy_model(11);
    let path = dir.path().join("w.ckpt");
    save_checkpoint(&src, &path).unwrap();
    let mut dst = toy_model(12);
    assert_ne!(values(&src), values(&dst));
    warm_start(&mut dst, &path).unwrap();
    assert_eq!(values(&src), values(&dst));

    let mut other = HireModel::new(
        HyperParams { d_model: 8, dtype: DType::F32, ..HyperParams::toy(Direction::ImageToText) },
        Dims::TOY.region_dim,
        Dims::TOY.word_dim,
        0,
    )
    .unwrap();
    assert!(matches!(warm_start(&mut other, &path), Err(HireError::Checkpoint(_))));
}
