//! Statistical and end-to-end sanity checks with documented tolerances.

use ssmll::d2l::{HeadPolicy, Temperature};
use ssmll::data::{generate_synthetic, load_matrix, save_matrix, split_labeled, SynthConfig};
use ssmll::harness::{evaluate, warmup, StepPlan, TrainConfig, TrainState, TrainingView};
use ssmll::metrics::mean_average_precision;
use ssmll::ml::{AdamWConfig, BackboneSpec, DenseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn coco_like_label_density() {
    // 80 classes with mean 2.9 labels per instance; tolerance ±0.15.
    let mut cfg = SynthConfig::uniform(80, 4, 4, 4000, 0, 2.9 / 80.0, 11);
    cfg.require_positive = false;
    cfg.correlation = 0.4;
    cfg.blocks = (0..10).map(|b| (b * 8..b * 8 + 8).collect()).collect();
    let c = generate_synthetic(&cfg).unwrap();
    let mean = c.train_labels.count_positives() as f64 / c.train_labels.rows() as f64;
    assert!((mean - 2.9).abs() < 0.15, "mean labels {mean}");
}

#[test]
fn csv_round_trip_1000_by_80() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = DenseMatrix::from_vec(1000, 80, (0..80_000).map(|_| rng.random_range(-1e3..1e3)).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    save_matrix(&path, &m).unwrap();
    let back = load_matrix(&path).unwrap();
    assert!(m.max_abs_diff(&back).unwrap() < 1e-12);
}

#[test]
fn random_model_map_is_near_prior() {
    // Features carry no label signal (prototypes are zero), so any ranking is
    // random and mAP ≈ prior; tolerance ±0.05.
    let mut cfg = SynthConfig::uniform(5, 8, 2, 4000, 2000, 0.3, 5);
    cfg.prototype_sigma = 0.0;
    cfg.require_positive = false;
    let data = split_labeled(&generate_synthetic(&cfg).unwrap(), 0.5, 1).unwrap();
    let tc = TrainConfig::default();
    let plan = StepPlan::new(&tc, data.labeled.len(), data.unlabeled.len());
    let state = TrainState::new(&tc, data.dim(), data.classes(), &plan, 9);
    let (m, _) = evaluate(&state.model, &data.test, &data.test_labels, Temperature::default(), HeadPolicy::Mean, 0.5).unwrap();
    assert!((m.map - 0.3).abs() < 0.05, "null mAP {}", m.map);
}

#[test]
fn warmup_fits_separable_data() {
    // N = 200, K = 5, low feature noise: labeled-set mAP after warm-up > 0.9.
    let mut cfg = SynthConfig::uniform(5, 16, 4, 250, 50, 0.3, 8);
    cfg.feature_sigma = 0.1;
    let data = split_labeled(&generate_synthetic(&cfg).unwrap(), 0.99, 2).unwrap();
    assert_eq!(data.labeled.len(), 198);
    let tc = TrainConfig {
        optimizer: AdamWConfig { lr: 1e-2, ..Default::default() },
        backbone: BackboneSpec::Hidden { width: 32 },
        ..Default::default()
    };
    let plan = StepPlan::new(&tc, data.labeled.len(), data.unlabeled.len());
    let mut state = TrainState::new(&tc, data.dim(), data.classes(), &plan, 4);
    warmup(&mut state, TrainingView::of(&data), &tc, &plan).unwrap();
    let scores = state.eval_model().predict(&data.labeled, Temperature::default(), HeadPolicy::Generator).unwrap();
    let map = mean_average_precision(&scores, &data.labels).unwrap();
    assert!(map > 0.9, "labeled mAP after warm-up {map}");
}
