//! Monte-Carlo confidence in the predicted class, and its banded summary.
//!
//! Sample 1 is always the unperturbed mean-mode forward; the remaining
//! `n_samples − 1` forwards either resample the latent posterior (epistemic)
//! or perturb the input class maps (aleatoric). Sample `s` draws from its own
//! stream derived from `(seed, s)`, so results do not depend on evaluation
//! order and the first 20 samples of a 200-sample run match a 20-sample run.

use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Tensor};
use crate::data::{InputSampler, SegSequence};
use crate::losses::Outcome;
use crate::model::{predict_batch, predicted_positive, ModelError, ModelParams};
use crate::rng::{rng_for, tag};

pub const DEFAULT_SAMPLES: usize = 20;

/// Row labels of a [`BandedReport`].
pub const BAND_LABELS: [&str; 3] = ["0-30", "31-70", "71-100"];

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid uncertainty input: {0}")]
    InvalidInput(String),
    #[error("confidence {0} outside [0, 100]")]
    ConfidenceRange(f64),
    #[error("result for {id} is {found:?}, report is {expected:?}")]
    MixedKinds {
        id: String,
        expected: UncertaintyKind,
        found: UncertaintyKind,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Epistemic,
    Aleatoric,
}

impl UncertaintyKind {
    pub fn name(self) -> &'static str {
        match self {
            UncertaintyKind::Epistemic => "epistemic",
            UncertaintyKind::Aleatoric => "aleatoric",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceResult {
    pub subject_id: String,
    pub label: bool,
    /// Class of the unperturbed forward.
    pub predicted: bool,
    pub kind: UncertaintyKind,
    pub n_samples: usize,
    pub positive_votes: usize,
    /// Predicted-positive flag of every forward, unperturbed first.
    pub sample_predictions: Vec<bool>,
    /// Percentage of forwards agreeing with `predicted`.
    pub confidence: f64,
}

impl ConfidenceResult {
    /// Builds a result from per-sample predictions; the first one is the
    /// unperturbed forward and fixes the predicted class.
    pub fn from_samples(
        subject_id: impl Into<String>,
        label: bool,
        kind: UncertaintyKind,
        sample_predictions: Vec<bool>,
    ) -> Result<Self, UncertaintyError> {
        let n = sample_predictions.len();
        if n < 2 {
            return Err(UncertaintyError::InvalidInput(format!(
                "{n} samples, at least 2 required"
            )));
        }
        let predicted = sample_predictions[0];
        let positive_votes = sample_predictions.iter().filter(|&&p| p).count();
        let positive = 100.0 * positive_votes as f64 / n as f64;
        let confidence = if predicted { positive } else { 100.0 - positive };
        Ok(Self {
            subject_id: subject_id.into(),
            label,
            predicted,
            kind,
            n_samples: n,
            positive_votes,
            sample_predictions,
            confidence,
        })
    }

    /// Percentage of forwards predicting the positive class.
    pub fn positive_confidence(&self) -> f64 {
        100.0 * self.positive_votes as f64 / self.n_samples as f64
    }

    pub fn outcome(&self) -> Outcome {
        Outcome::of(self.predicted, self.label)
    }

    pub fn band(&self) -> usize {
        confidence_band(self.confidence).expect("confidence is a percentage by construction")
    }
}

fn check_samples(n_samples: usize) -> Result<(), UncertaintyError> {
    if n_samples < 2 {
        return Err(UncertaintyError::InvalidInput(format!(
            "n_samples = {n_samples}, at least 2 required"
        )));
    }
    Ok(())
}

/// Latent-resampling confidence: the mean embedding plus `n_samples − 1`
/// draws from each frame's posterior.
pub fn estimate_epistemic(
    params: &ModelParams,
    record: &SegSequence,
    n_samples: usize,
    seed: u64,
) -> Result<ConfidenceResult, UncertaintyError> {
    check_samples(n_samples)?;
    let c = *params.config();
    let (t, d) = (c.n_frames, c.latent_dim);
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(crate::model::one_hot_batch(&c, &[record])?);
    let (mu, logvar) = bound.encode(&mut g, x)?;
    let mu = g.value(mu).data().to_vec();
    let std: Vec<f64> = g.value(logvar).data().iter().map(|lv| (0.5 * lv).exp()).collect();

    let mut z = Vec::with_capacity(n_samples * t * d);
    z.extend_from_slice(&mu);
    for s in 1..n_samples {
        let mut rng = rng_for(seed, &[tag::EPISTEMIC, s as u64]);
        for (m, sd) in mu.iter().zip(&std) {
            let eps: f64 = StandardNormal.sample(&mut rng);
            z.push(m + sd * eps);
        }
    }
    let z = g.constant(Tensor::new(vec![n_samples * t, d], z).map_err(ModelError::from)?);
    let probs = bound.classify(&mut g, z)?;
    let votes = g
        .value(probs)
        .data()
        .chunks(2)
        .map(|p| predicted_positive(p[0]))
        .collect();
    ConfidenceResult::from_samples(&record.id, record.label, UncertaintyKind::Epistemic, votes)
}

/// Input-perturbation confidence: the original record plus `n_samples − 1`
/// outputs of `sampler`, each forwarded in mean mode.
pub fn estimate_aleatoric(
    params: &ModelParams,
    record: &SegSequence,
    sampler: &dyn InputSampler,
    n_samples: usize,
    seed: u64,
) -> Result<ConfidenceResult, UncertaintyError> {
    check_samples(n_samples)?;
    let dims = params.config().dims();
    let mut variants = Vec::with_capacity(n_samples - 1);
    for s in 1..n_samples {
        let mut rng = rng_for(seed, &[tag::ALEATORIC, s as u64]);
        let v = sampler.sample(record, &mut rng);
        v.validate(&dims).map_err(|e| {
            UncertaintyError::InvalidInput(format!("sampler output {s} for {}: {e}", record.id))
        })?;
        variants.push(v);
    }
    let batch: Vec<&SegSequence> = std::iter::once(record).chain(&variants).collect();
    let votes = predict_batch(params, &batch)?
        .into_iter()
        .map(predicted_positive)
        .collect();
    ConfidenceResult::from_samples(&record.id, record.label, UncertaintyKind::Aleatoric, votes)
}

/// Band index of a percentage: `[0, 30]` → 0, `(30, 70]` → 1, `(70, 100]` → 2.
pub fn confidence_band(confidence: f64) -> Result<usize, UncertaintyError> {
    match confidence {
        c if (0.0..=30.0).contains(&c) => Ok(0),
        c if c > 30.0 && c <= 70.0 => Ok(1),
        c if c > 70.0 && c <= 100.0 => Ok(2),
        c => Err(UncertaintyError::ConfidenceRange(c)),
    }
}

/// Band × outcome counts, outcomes in TP, FN, FP, TN order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandedReport {
    pub kind: UncertaintyKind,
    pub counts: [[usize; 4]; 3],
}

/// One cell of a [`BandedReport`] in machine-readable form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTriple {
    pub band: String,
    pub outcome: Outcome,
    pub count: usize,
}

impl BandedReport {
    pub fn empty(kind: UncertaintyKind) -> Self {
        Self {
            kind,
            counts: [[0; 4]; 3],
        }
    }

    pub fn get(&self, band: usize, outcome: Outcome) -> usize {
        self.counts[band][outcome.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Per-outcome totals over all bands.
    pub fn outcome_totals(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for row in &self.counts {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Cellwise sum of two reports of the same kind.
    pub fn merge(&mut self, other: &BandedReport) -> Result<(), UncertaintyError> {
        if other.kind != self.kind {
            return Err(UncertaintyError::MixedKinds {
                id: "<report>".into(),
                expected: self.kind,
                found: other.kind,
            });
        }
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        Ok(())
    }

    /// `other − self`, cellwise.
    pub fn delta(&self, other: &BandedReport) -> [[i64; 4]; 3] {
        let mut out = [[0i64; 4]; 3];
        for b in 0..3 {
            for o in 0..4 {
                out[b][o] = other.counts[b][o] as i64 - self.counts[b][o] as i64;
            }
        }
        out
    }

    pub fn triples(&self) -> Vec<CountTriple> {
        BAND_LABELS
            .iter()
            .enumerate()
            .flat_map(|(b, label)| {
                Outcome::ALL.iter().map(move |&outcome| CountTriple {
                    band: (*label).to_string(),
                    outcome,
                    count: self.get(b, outcome),
                })
            })
            .collect()
    }

    /// Aligned plain-text table, one row per band.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} confidence", self.kind.name());
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>6} {:>6} {:>6}",
            "band", "TP", "FN", "FP", "TN"
        );
        for (label, row) in BAND_LABELS.iter().zip(&self.counts) {
            let _ = writeln!(
                s,
                "{:<10} {:>6} {:>6} {:>6} {:>6}",
                label, row[0], row[1], row[2], row[3]
            );
        }
        s
    }
}

/// Cross-tabulates results by confidence band and outcome.
pub fn banded_report(
    results: &[ConfidenceResult],
    kind: UncertaintyKind,
) -> Result<BandedReport, UncertaintyError> {
    let mut report = BandedReport::empty(kind);
    for r in results {
        if r.kind != kind {
            return Err(UncertaintyError::MixedKinds {
                id: r.subject_id.clone(),
                expected: kind,
                found: r.kind,
            });
        }
        report.counts[confidence_band(r.confidence)?][r.outcome().index()] += 1;
    }
    Ok(report)
}

/// Mean confidence over results with the given outcome, `None` if there are
/// none.
pub fn mean_confidence(results: &[ConfidenceResult], outcome: Outcome) -> Option<f64> {
    let picked: Vec<f64> = results
        .iter()
        .filter(|r| r.outcome() == outcome)
        .map(|r| r.confidence)
        .collect();
    (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
}
