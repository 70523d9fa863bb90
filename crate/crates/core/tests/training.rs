use uaware_core::data::{generate_dataset, Dataset};
use uaware_core::harness::{
    balanced_accuracy, compare_models, nested_cv, predict_labels, train, CompareConfig, CvConfig, Grid,
    HarnessError, TrainConfig, TrainMode,
};
use uaware_core::losses::LossWeights;
use uaware_core::model::{ArchConfig, ModelConfig, ModelParams};
use uaware_core::rng::{derive_seed, tag};
use uaware_core::{GenConfig, SegSequence};

fn small_dataset(n: usize, seed: u64) -> Dataset {
    generate_dataset(&GenConfig {
        n_subjects: n,
        n_frames: 4,
        height: 8,
        width: 8,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn small_arch() -> ArchConfig {
    ArchConfig {
        latent_dim: 4,
        enc_hidden: 24,
        dec_hidden: 24,
        clf_hidden: 16,
    }
}

fn small_train(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        arch: small_arch(),
        seed,
        ..Default::default()
    }
}

fn all(ds: &Dataset) -> Vec<&SegSequence> {
    ds.subjects.iter().collect()
}

#[test]
fn same_seed_gives_identical_traces_and_params() {
    let ds = small_dataset(16, 1);
    let cfg = small_train(4, 9);
    let a = train(&all(&ds), ds.dims, &cfg).unwrap();
    let b = train(&all(&ds), ds.dims, &cfg).unwrap();
    assert_eq!(a.trace.len(), 4);
    for (x, y) in a.trace.iter().zip(&b.trace) {
        for ((_, u), (_, v)) in x.loss.terms().iter().zip(y.loss.terms()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
    assert_eq!(a.params, b.params);
    let c = train(&all(&ds), ds.dims, &small_train(4, 10)).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let ds = small_dataset(12, 2);
    let cfg = small_train(0, 5);
    let out = train(&all(&ds), ds.dims, &cfg).unwrap();
    let init = ModelParams::init(
        ModelConfig::new(ds.dims, cfg.arch).unwrap(),
        derive_seed(cfg.seed, &[tag::TRAIN]),
    )
    .unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.params, init);
}

#[test]
fn empty_training_set_is_rejected() {
    let ds = small_dataset(12, 2);
    assert!(matches!(
        train(&[], ds.dims, &small_train(1, 0)),
        Err(HarnessError::InvalidInput(_))
    ));
}

#[test]
fn reconstruction_loss_does_not_increase_when_overfitting_one_batch() {
    let ds = small_dataset(8, 3);
    let cfg = TrainConfig {
        batch_size: 8,
        lr_vae: 1e-4,
        sample_latents: false,
        weights: LossWeights {
            beta: 0.001,
            gamma: 0.0,
            alpha: 0.0,
            margin: 0.6,
        },
        mode: TrainMode::Baseline,
        ..small_train(60, 4)
    };
    let out = train(&all(&ds), ds.dims, &cfg).unwrap();
    let re: Vec<f64> = out.trace.iter().map(|e| e.loss.l_re).collect();
    for w in re.windows(2) {
        assert!(w[1] <= w[0], "{re:?}");
    }
    assert!(re[re.len() - 1] < re[0]);
}

#[test]
fn baseline_fits_separable_training_data() {
    let ds = generate_dataset(&GenConfig::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        mode: TrainMode::Baseline,
        weights: LossWeights::BASELINE_REFERENCE,
        seed: 1,
        ..Default::default()
    };
    let records = all(&ds);
    let out = train(&records, ds.dims, &cfg).unwrap();
    let labels: Vec<bool> = records.iter().map(|r| r.label).collect();
    let ba = balanced_accuracy(&predict_labels(&out.params, &records).unwrap(), &labels).unwrap();
    assert!(ba >= 0.9, "training balanced accuracy {ba}");
}

fn tiny_cv(epochs: usize, seed: u64) -> CvConfig {
    CvConfig {
        train: small_train(epochs, seed),
        n_samples: 4,
        ..Default::default()
    }
}

#[test]
fn singleton_grid_is_selected_and_folds_partition_the_ids() {
    let ds = small_dataset(24, 5);
    let w = LossWeights::UNCERTAINTY_AWARE_REFERENCE;
    let grid = Grid::single(w, 8);
    let r = nested_cv(&ds, &grid, &tiny_cv(2, 6)).unwrap();
    assert_eq!(r.folds.len(), 5);
    for f in &r.folds {
        assert_eq!(f.selected_index, 0);
        assert_eq!(f.selected.weights, w);
        assert_eq!(f.selected.clf_hidden, 8);
        assert_eq!(f.inner_scores.len(), 1);
        assert_eq!(f.inner_splits.len(), 2);
    }
    let ids: Vec<String> = ds.subjects.iter().map(|s| s.id.clone()).collect();
    r.check_partition(&ids).unwrap();
    r.check_no_leakage().unwrap();
    assert!(r.leakage().iter().all(|(_, ids)| ids.is_empty()));
    assert_eq!(r.epistemic.total(), 24);
    assert_eq!(r.aleatoric.total(), 24);
}

#[test]
fn tampered_fold_is_reported_as_leakage() {
    let ds = small_dataset(20, 7);
    let grid = Grid::single(LossWeights::BASELINE_REFERENCE, 8);
    let mut r = nested_cv(&ds, &grid, &tiny_cv(1, 2)).unwrap();
    let stolen = r.folds[0].test_ids[0].clone();
    r.folds[0].inner_splits[1].train_ids.push(stolen.clone());
    let leaks = r.leakage();
    assert_eq!(leaks[0], (0, vec![stolen]));
    assert!(leaks[1..].iter().all(|(_, ids)| ids.is_empty()));
    assert!(matches!(r.check_no_leakage(), Err(HarnessError::Leakage { fold: 0, .. })));
}

#[test]
fn nested_cv_is_deterministic() {
    let ds = small_dataset(20, 8);
    let grid = Grid {
        beta: vec![0.001, 0.1],
        gamma: vec![0.5],
        alpha: vec![0.05],
        margin: vec![0.6],
        clf_hidden: vec![8],
    };
    let a = nested_cv(&ds, &grid, &tiny_cv(2, 3)).unwrap();
    let b = nested_cv(&ds, &grid, &tiny_cv(2, 3)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn comparison_with_zero_alpha_has_identical_arms() {
    let ds = small_dataset(20, 9);
    let grid = Grid {
        beta: vec![0.1],
        gamma: vec![0.5],
        alpha: vec![0.0],
        margin: vec![0.6],
        clf_hidden: vec![8],
    };
    let cfg = CompareConfig {
        cv: tiny_cv(2, 4),
        warm_start: false,
    };
    let c = compare_models(&ds, &grid, &cfg).unwrap();
    let strip = |r: &uaware_core::CVResult| {
        let mut r = r.clone();
        r.mode = TrainMode::Baseline;
        serde_json::to_string(&r).unwrap()
    };
    assert_eq!(strip(&c.baseline), strip(&c.uncertainty_aware));
    assert_eq!(c.epistemic_delta, [[0; 4]; 3]);
    assert_eq!(c.aleatoric_delta, [[0; 4]; 3]);
    for (b, u) in c.baseline.folds.iter().zip(&c.uncertainty_aware.folds) {
        assert_eq!(b.test_ids, u.test_ids);
    }
}
