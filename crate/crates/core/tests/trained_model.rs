use std::sync::OnceLock;

use uaware_core::data::{generate_dataset, BoundaryJitter};
use uaware_core::harness::{train, TrainConfig, TrainMode};
use uaware_core::losses::{LossWeights, Outcome};
use uaware_core::model::{decode, encode, forward_subject, predict_batch, predicted_positive, SubjectMode};
use uaware_core::uncertainty::{banded_report, estimate_aleatoric, estimate_epistemic};
use uaware_core::{Dataset, ModelParams, SegSequence, Tensor, UncertaintyKind};

fn fixture() -> &'static (Dataset, ModelParams) {
    static CELL: OnceLock<(Dataset, ModelParams)> = OnceLock::new();
    CELL.get_or_init(|| {
        let ds = generate_dataset(&Default::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            mode: TrainMode::Baseline,
            weights: LossWeights::BASELINE_REFERENCE,
            seed: 1,
            ..Default::default()
        };
        let records: Vec<&SegSequence> = ds.subjects.iter().collect();
        let params = train(&records, ds.dims, &cfg).unwrap().params;
        (ds, params)
    })
}

fn one_hot_frame(s: &SegSequence, t: usize, n_classes: usize) -> Tensor {
    let frame = s.frame(t);
    let mut data = vec![0.0; frame.len() * n_classes];
    for (i, &c) in frame.iter().enumerate() {
        data[i * n_classes + c as usize] = 1.0;
    }
    Tensor::new(vec![s.height(), s.width(), n_classes], data).unwrap()
}

#[test]
fn reconstruction_of_mean_latent_is_pixel_accurate() {
    let (ds, params) = fixture();
    let c = ds.dims.n_classes;
    let (mut hit, mut total) = (0usize, 0usize);
    for s in &ds.subjects {
        for t in 0..s.n_frames() {
            let (mu, _) = encode(&one_hot_frame(s, t, c), params).unwrap();
            let logits = decode(&mu, params).unwrap();
            for (px, &truth) in logits.data().chunks(c).zip(s.frame(t)) {
                let argmax = (0..c).max_by(|&a, &b| px[a].total_cmp(&px[b])).unwrap();
                hit += usize::from(argmax == truth as usize);
                total += 1;
            }
        }
    }
    let acc = hit as f64 / total as f64;
    assert!(acc > 0.9, "pixel accuracy {acc}");
}

#[test]
fn clearly_separated_subjects_are_classified_correctly() {
    let (ds, params) = fixture();
    let by_contraction = |label: bool| {
        ds.subjects
            .iter()
            .filter(|s| s.label == label)
            .max_by(|a, b| {
                let key = |s: &SegSequence| if label { s.meta.contraction } else { -s.meta.contraction };
                key(a).total_cmp(&key(b))
            })
            .unwrap()
    };
    for label in [true, false] {
        let s = by_contraction(label);
        let f = forward_subject(s, params, SubjectMode::Mean).unwrap();
        let p_correct = if label { f.p_pos } else { f.p_neg };
        assert!(p_correct > 0.5, "{}: {p_correct}", s.id);
    }
}

#[test]
fn different_noise_draws_change_the_probability() {
    let (ds, params) = fixture();
    let s = &ds.subjects[0];
    let d = params.config().latent_dim;
    let noise = |v: f64| Tensor::filled(&[s.n_frames(), d], v);
    let a = forward_subject(s, params, SubjectMode::Sampled(&noise(0.7))).unwrap();
    let b = forward_subject(s, params, SubjectMode::Sampled(&noise(-0.7))).unwrap();
    assert_ne!(a.p_pos, b.p_pos);
}

fn nearest_to_boundary<'a>(ds: &'a Dataset, params: &ModelParams) -> &'a SegSequence {
    let records: Vec<&SegSequence> = ds.subjects.iter().collect();
    let p = predict_batch(params, &records).unwrap();
    let i = (0..p.len())
        .min_by(|&a, &b| (p[a] - 0.5).abs().total_cmp(&(p[b] - 0.5).abs()))
        .unwrap();
    records[i]
}

#[test]
fn boundary_jitter_lowers_confidence_near_the_decision_boundary() {
    let (ds, params) = fixture();
    let s = nearest_to_boundary(ds, params);
    let r = estimate_aleatoric(params, s, &BoundaryJitter::new(0.5).unwrap(), 20, 3).unwrap();
    assert!(r.confidence < 100.0, "{r:?}");
}

#[test]
fn confidences_are_recounts_of_stored_votes() {
    let (ds, params) = fixture();
    let jitter = BoundaryJitter::new(0.5).unwrap();
    for (i, s) in ds.subjects.iter().enumerate().take(20) {
        for r in [
            estimate_epistemic(params, s, 20, i as u64).unwrap(),
            estimate_aleatoric(params, s, &jitter, 20, i as u64).unwrap(),
        ] {
            assert_eq!(r.sample_predictions.len(), 20);
            let agree = r.sample_predictions.iter().filter(|&&p| p == r.predicted).count();
            assert_eq!(r.confidence, 100.0 * agree as f64 / 20.0);
            assert_eq!(r.confidence % 5.0, 0.0);
            let positive = 100.0 * r.positive_votes as f64 / 20.0;
            let expected = if r.predicted { positive } else { 100.0 - positive };
            assert_eq!(r.confidence, expected);
        }
    }
}

#[test]
fn band_column_sums_equal_mean_mode_confusion_counts() {
    let (ds, params) = fixture();
    let records: Vec<&SegSequence> = ds.subjects.iter().collect();
    let preds: Vec<bool> = predict_batch(params, &records)
        .unwrap()
        .into_iter()
        .map(predicted_positive)
        .collect();
    let mut confusion = [0usize; 4];
    for (p, s) in preds.iter().zip(&records) {
        confusion[Outcome::of(*p, s.label).index()] += 1;
    }
    let results: Vec<_> = records
        .iter()
        .enumerate()
        .map(|(i, s)| estimate_epistemic(params, s, 20, i as u64).unwrap())
        .collect();
    let report = banded_report(&results, UncertaintyKind::Epistemic).unwrap();
    assert_eq!(report.outcome_totals(), confusion);
    assert_eq!(report.total(), records.len());
}

/// Two-proportion z statistic for the positive share among the resampled
/// forwards (the unperturbed first forward is excluded).
fn z_statistic(a_votes: usize, a_n: usize, b_votes: usize, b_n: usize) -> f64 {
    let (pa, pb) = (a_votes as f64 / a_n as f64, b_votes as f64 / b_n as f64);
    let pooled = (a_votes + b_votes) as f64 / (a_n + b_n) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / a_n as f64 + 1.0 / b_n as f64)).sqrt();
    if se == 0.0 {
        0.0
    } else {
        (pa - pb) / se
    }
}

#[test]
fn more_samples_move_confidence_within_binomial_error() {
    let (ds, params) = fixture();
    let jitter = BoundaryJitter::new(0.5).unwrap();
    let mut tests = 0;
    let mut rejections = 0;
    for (i, s) in ds.subjects.iter().enumerate() {
        let pairs = [
            (
                estimate_epistemic(params, s, 20, 1000 + i as u64).unwrap(),
                estimate_epistemic(params, s, 200, 5000 + i as u64).unwrap(),
            ),
            (
                estimate_aleatoric(params, s, &jitter, 20, 1000 + i as u64).unwrap(),
                estimate_aleatoric(params, s, &jitter, 200, 5000 + i as u64).unwrap(),
            ),
        ];
        for (small, large) in pairs {
            let resampled = |r: &uaware_core::ConfidenceResult| r.positive_votes - usize::from(r.predicted);
            let z = z_statistic(resampled(&small), 19, resampled(&large), 199);
            tests += 1;
            rejections += usize::from(z.abs() > 1.96);
        }
    }
    // at the 95% level about 5% of tests reject; P(Bin(146, 0.05) > 15) < 0.01
    assert!(rejections <= 15, "{rejections} of {tests}");
}
