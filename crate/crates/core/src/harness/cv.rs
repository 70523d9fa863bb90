use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::Confusion;
use super::train::{train_from, EpochLoss, TrainConfig, TrainMode};
use super::HarnessError;
use crate::data::{BoundaryJitter, Dataset, SegSequence};
use crate::losses::{LossWeights, Outcome};
use crate::model::{predict_batch, predicted_positive, ModelConfig, ModelParams};
use crate::rng::{derive_seed, rng_for, tag};
use crate::uncertainty::{
    banded_report, estimate_aleatoric, estimate_epistemic, mean_confidence, BandedReport,
    ConfidenceResult, UncertaintyKind, BAND_LABELS, DEFAULT_SAMPLES,
};

/// Stream index of the final per-fold training run; inner splits use their
/// split index.
const FINAL_RUN: u64 = 1 << 16;

/// Splits sample indices into `k` folds, each holding a near-equal share of
/// both classes. Each fold is sorted ascending.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, HarnessError> {
    if k < 2 {
        return Err(HarnessError::Config(format!("{k} folds, at least 2 required")));
    }
    let mut rng = rng_for(seed, &[tag::FOLDS]);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k || neg.len() < k {
        return Err(HarnessError::Stratification(format!(
            "{} positives and {} negatives cannot fill {k} folds with both classes",
            pos.len(),
            neg.len()
        )));
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, idx) in pos.into_iter().chain(neg).enumerate() {
        folds[i % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Hyperparameter lists searched by cartesian product, in declared order
/// (beta outermost, classifier width innermost).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub margin: Vec<f64>,
    pub clf_hidden: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            beta: vec![0.001, 0.1, 2.0],
            gamma: vec![0.0, 0.5, 2.0],
            alpha: vec![0.01, 0.05, 2.0],
            margin: vec![0.01, 0.6, 1.0],
            clf_hidden: vec![32, 64],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub weights: LossWeights,
    pub clf_hidden: usize,
}

impl Grid {
    /// A grid holding exactly one point.
    pub fn single(weights: LossWeights, clf_hidden: usize) -> Self {
        Self {
            beta: vec![weights.beta],
            gamma: vec![weights.gamma],
            alpha: vec![weights.alpha],
            margin: vec![weights.margin],
            clf_hidden: vec![clf_hidden],
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let lists = [
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("alpha", &self.alpha),
            ("margin", &self.margin),
        ];
        for (name, values) in lists {
            if values.is_empty() {
                return Err(HarnessError::Config(format!("grid list {name} is empty")));
            }
            if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(HarnessError::Config(format!("grid {name} value {v} is invalid")));
            }
        }
        if self.clf_hidden.is_empty() || self.clf_hidden.contains(&0) {
            return Err(HarnessError::Config(
                "grid clf_hidden must list positive widths".into(),
            ));
        }
        Ok(())
    }

    /// Grid points for `mode`. Baseline collapses alpha to 0 and the margin
    /// to its first listed value.
    pub fn points(&self, mode: TrainMode) -> Vec<GridPoint> {
        let (alpha, margin) = match mode {
            TrainMode::Baseline => (vec![0.0], vec![self.margin[0]]),
            TrainMode::UncertaintyAware => (self.alpha.clone(), self.margin.clone()),
        };
        let mut out = Vec::new();
        for &beta in &self.beta {
            for &gamma in &self.gamma {
                for &alpha in &alpha {
                    for &margin in &margin {
                        for &clf_hidden in &self.clf_hidden {
                            out.push(GridPoint {
                                weights: LossWeights {
                                    beta,
                                    gamma,
                                    alpha,
                                    margin,
                                },
                                clf_hidden,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    /// Base training settings; `seed` seeds every stream of the run.
    pub train: TrainConfig,
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub n_samples: usize,
    /// Boundary reassignment probability for the aleatoric sampler.
    pub jitter: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            outer_folds: 5,
            inner_folds: 2,
            n_samples: DEFAULT_SAMPLES,
            jitter: 0.5,
        }
    }
}

impl CvConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        self.train.validate()?;
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(HarnessError::Config("fold counts must be at least 2".into()));
        }
        if self.n_samples < 2 {
            return Err(HarnessError::Config("n_samples must be at least 2".into()));
        }
        BoundaryJitter::new(self.jitter)
            .ok_or_else(|| HarnessError::Config(format!("jitter {} outside [0, 1]", self.jitter)))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub id: String,
    pub label: bool,
    pub p_pos: f64,
    pub predicted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub inner_splits: Vec<InnerSplit>,
    /// Mean inner validation balanced accuracy of every grid point.
    pub inner_scores: Vec<f64>,
    pub selected_index: usize,
    pub selected: GridPoint,
    pub final_trace: Vec<EpochLoss>,
    pub predictions: Vec<SubjectPrediction>,
    pub balanced_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CVResult {
    pub mode: TrainMode,
    pub seed: u64,
    pub grid: Vec<GridPoint>,
    pub folds: Vec<FoldResult>,
    pub mean_balanced_accuracy: f64,
    pub pooled: Confusion,
    pub epistemic: BandedReport,
    pub aleatoric: BandedReport,
    pub epistemic_results: Vec<ConfidenceResult>,
    pub aleatoric_results: Vec<ConfidenceResult>,
}

impl CVResult {
    /// Ids of each fold's test set that also appear in its training or
    /// inner-selection sets. Empty for every fold when there is no leakage.
    pub fn leakage(&self) -> Vec<(usize, Vec<String>)> {
        self.folds
            .iter()
            .map(|f| {
                let test: HashSet<&String> = f.test_ids.iter().collect();
                let mut seen: Vec<String> = f
                    .train_ids
                    .iter()
                    .chain(f.inner_splits.iter().flat_map(|s| s.train_ids.iter().chain(&s.val_ids)))
                    .filter(|id| test.contains(id))
                    .cloned()
                    .collect();
                seen.sort();
                seen.dedup();
                (f.fold, seen)
            })
            .collect()
    }

    pub fn check_no_leakage(&self) -> Result<(), HarnessError> {
        match self.leakage().into_iter().find(|(_, ids)| !ids.is_empty()) {
            Some((fold, ids)) => Err(HarnessError::Leakage { fold, ids }),
            None => Ok(()),
        }
    }

    /// Checks that the outer test folds partition `ids` exactly.
    pub fn check_partition(&self, ids: &[String]) -> Result<(), HarnessError> {
        let mut tested: Vec<&String> = self.folds.iter().flat_map(|f| &f.test_ids).collect();
        tested.sort();
        let mut all: Vec<&String> = ids.iter().collect();
        all.sort();
        if tested != all {
            return Err(HarnessError::InvalidInput(
                "outer test folds do not partition the dataset".into(),
            ));
        }
        Ok(())
    }

    pub fn predictions(&self) -> impl Iterator<Item = &SubjectPrediction> {
        self.folds.iter().flat_map(|f| &f.predictions)
    }

    pub fn mean_confidence(&self, kind: UncertaintyKind, outcome: Outcome) -> Option<f64> {
        let results = match kind {
            UncertaintyKind::Epistemic => &self.epistemic_results,
            UncertaintyKind::Aleatoric => &self.aleatoric_results,
        };
        mean_confidence(results, outcome)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode {:?}, seed {}, {} grid points", self.mode, self.seed, self.grid.len());
        for f in &self.folds {
            let w = f.selected.weights;
            let _ = writeln!(
                s,
                "fold {}: n_test {:>3}  balanced accuracy {:.4}  beta {} gamma {} alpha {} m {} hidden {}",
                f.fold,
                f.test_ids.len(),
                f.balanced_accuracy,
                w.beta,
                w.gamma,
                w.alpha,
                w.margin,
                f.selected.clf_hidden
            );
        }
        let _ = writeln!(s, "mean balanced accuracy {:.4}", self.mean_balanced_accuracy);
        s.push_str(&self.epistemic.render_table());
        s.push_str(&self.aleatoric.render_table());
        s
    }
}

/// Models kept from one arm so that another arm can start from them.
#[derive(Clone, Debug)]
pub struct FoldModels {
    pub final_model: ModelParams,
    /// Inner-split models trained at the selected grid point.
    pub inner: Vec<ModelParams>,
}

#[derive(Clone, Debug)]
pub struct CvRun {
    pub result: CVResult,
    pub models: Vec<FoldModels>,
}

/// Nested cross-validation in the mode of `cfg.train`.
pub fn nested_cv(dataset: &Dataset, grid: &Grid, cfg: &CvConfig) -> Result<CVResult, HarnessError> {
    Ok(nested_cv_run(dataset, grid, cfg, cfg.train.mode, None)?.result)
}

/// Nested cross-validation in `mode`. With `warm`, every training run copies
/// the encoder and decoder of the corresponding run in `warm` (same outer
/// fold, same inner split) before training.
pub fn nested_cv_run(
    dataset: &Dataset,
    grid: &Grid,
    cfg: &CvConfig,
    mode: TrainMode,
    warm: Option<&[FoldModels]>,
) -> Result<CvRun, HarnessError> {
    cfg.validate()?;
    grid.validate()?;
    let seed = cfg.train.seed;
    let n = dataset.len();
    if n < 10 {
        return Err(HarnessError::InvalidInput(format!(
            "nested cross-validation needs at least 10 subjects, got {n}"
        )));
    }
    if let Some(w) = warm {
        if w.len() != cfg.outer_folds {
            return Err(HarnessError::InvalidInput(format!(
                "{} warm-start folds for {} outer folds",
                w.len(),
                cfg.outer_folds
            )));
        }
    }
    let labels: Vec<bool> = dataset.subjects.iter().map(|s| s.label).collect();
    let outer = stratified_folds(&labels, cfg.outer_folds, seed)?;
    let points = grid.points(mode);
    let jitter = BoundaryJitter::new(cfg.jitter).expect("validated");
    let ids = |idx: &[usize]| -> Vec<String> {
        idx.iter().map(|&i| dataset.subjects[i].id.clone()).collect()
    };

    let mut folds = Vec::with_capacity(outer.len());
    let mut models = Vec::with_capacity(outer.len());
    let mut epistemic_results = Vec::new();
    let mut aleatoric_results = Vec::new();

    for (k, test_idx) in outer.iter().enumerate() {
        let test_set: HashSet<usize> = test_idx.iter().copied().collect();
        let train_idx: Vec<usize> = (0..n).filter(|i| !test_set.contains(i)).collect();
        let train_labels: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
        let inner = stratified_folds(
            &train_labels,
            cfg.inner_folds,
            derive_seed(seed, &[tag::FOLDS, k as u64 + 1]),
        )?
        .into_iter()
        .map(|f| f.into_iter().map(|j| train_idx[j]).collect::<Vec<_>>())
        .collect::<Vec<_>>();
        let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..inner.len())
            .map(|s| {
                let val = inner[s].clone();
                let mut tr: Vec<usize> = inner
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != s)
                    .flat_map(|(_, f)| f.iter().copied())
                    .collect();
                tr.sort_unstable();
                (tr, val)
            })
            .collect();

        let mut scores = Vec::with_capacity(points.len());
        let mut best: Option<(usize, f64, Vec<ModelParams>)> = None;
        for (gi, point) in points.iter().enumerate() {
            let mut split_models = Vec::with_capacity(splits.len());
            let mut total = 0.0;
            for (s, (tr, val)) in splits.iter().enumerate() {
                let warm_model = warm.map(|w| &w[k].inner[s]);
                let params = fit(dataset, tr, point, cfg, mode, run_seed(seed, k, s as u64), warm_model)?;
                let records = select(dataset, val);
                let preds: Vec<bool> = predict_batch(&params.params, &records)?
                    .into_iter()
                    .map(predicted_positive)
                    .collect();
                let y: Vec<bool> = records.iter().map(|r| r.label).collect();
                total += Confusion::from_predictions(&preds, &y)?.balanced_accuracy()?;
                split_models.push(params.params);
            }
            let score = total / splits.len() as f64;
            scores.push(score);
            if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
                best = Some((gi, score, split_models));
            }
        }
        let (selected_index, _, inner_models) = best.expect("grid is non-empty");
        let selected = points[selected_index];

        let warm_model = warm.map(|w| &w[k].final_model);
        let out = fit(dataset, &train_idx, &selected, cfg, mode, run_seed(seed, k, FINAL_RUN), warm_model)?;
        let test_records = select(dataset, test_idx);
        let p_pos = predict_batch(&out.params, &test_records)?;
        let predictions: Vec<SubjectPrediction> = test_records
            .iter()
            .zip(&p_pos)
            .map(|(r, &p)| SubjectPrediction {
                id: r.id.clone(),
                label: r.label,
                p_pos: p,
                predicted: predicted_positive(p),
            })
            .collect();
        let preds: Vec<bool> = predictions.iter().map(|p| p.predicted).collect();
        let y: Vec<bool> = predictions.iter().map(|p| p.label).collect();
        let balanced_accuracy = Confusion::from_predictions(&preds, &y)?.balanced_accuracy()?;

        for (&i, r) in test_idx.iter().zip(&test_records) {
            epistemic_results.push(estimate_epistemic(
                &out.params,
                r,
                cfg.n_samples,
                derive_seed(seed, &[tag::EPISTEMIC, i as u64]),
            )?);
            aleatoric_results.push(estimate_aleatoric(
                &out.params,
                r,
                &jitter,
                cfg.n_samples,
                derive_seed(seed, &[tag::ALEATORIC, i as u64]),
            )?);
        }

        folds.push(FoldResult {
            fold: k,
            train_ids: ids(&train_idx),
            test_ids: ids(test_idx),
            inner_splits: splits
                .iter()
                .map(|(tr, val)| InnerSplit {
                    train_ids: ids(tr),
                    val_ids: ids(val),
                })
                .collect(),
            inner_scores: scores,
            selected_index,
            selected,
            final_trace: out.trace,
            predictions,
            balanced_accuracy,
        });
        models.push(FoldModels {
            final_model: out.params,
            inner: inner_models,
        });
    }

    let all_preds: Vec<bool> = folds.iter().flat_map(|f| f.predictions.iter().map(|p| p.predicted)).collect();
    let all_labels: Vec<bool> = folds.iter().flat_map(|f| f.predictions.iter().map(|p| p.label)).collect();
    let result = CVResult {
        mode,
        seed,
        grid: points,
        mean_balanced_accuracy: folds.iter().map(|f| f.balanced_accuracy).sum::<f64>() / folds.len() as f64,
        pooled: Confusion::from_predictions(&all_preds, &all_labels)?,
        folds,
        epistemic: banded_report(&epistemic_results, UncertaintyKind::Epistemic)?,
        aleatoric: banded_report(&aleatoric_results, UncertaintyKind::Aleatoric)?,
        epistemic_results,
        aleatoric_results,
    };
    Ok(CvRun { result, models })
}

fn run_seed(seed: u64, fold: usize, run: u64) -> u64 {
    derive_seed(seed, &[tag::CV_TRAIN, fold as u64, run])
}

fn select<'a>(dataset: &'a Dataset, idx: &[usize]) -> Vec<&'a SegSequence> {
    idx.iter().map(|&i| &dataset.subjects[i]).collect()
}

/// Trains one grid point. The seed depends on the fold and split only, so
/// identical hyperparameters always yield identical models.
fn fit(
    dataset: &Dataset,
    idx: &[usize],
    point: &GridPoint,
    cfg: &CvConfig,
    mode: TrainMode,
    seed: u64,
    warm: Option<&ModelParams>,
) -> Result<super::TrainOutput, HarnessError> {
    let mut tc = cfg.train.clone();
    tc.weights = point.weights;
    tc.arch.clf_hidden = point.clf_hidden;
    tc.mode = mode;
    tc.seed = seed;
    let config = ModelConfig::new(dataset.dims, tc.arch)?;
    let mut init = ModelParams::init(config, derive_seed(seed, &[tag::TRAIN]))?;
    if let Some(w) = warm {
        init = init.with_vae_from(w)?;
    }
    train_from(&select(dataset, idx), &tc, init)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareConfig {
    pub cv: CvConfig,
    /// Start every uncertainty-aware run from the encoder and decoder of the
    /// matching baseline run.
    pub warm_start: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            cv: CvConfig::default(),
            warm_start: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub mean_balanced_accuracy: f64,
    pub epistemic_tp_confidence: Option<f64>,
    pub aleatoric_tp_confidence: Option<f64>,
}

impl ArmSummary {
    fn of(r: &CVResult) -> Self {
        Self {
            mean_balanced_accuracy: r.mean_balanced_accuracy,
            epistemic_tp_confidence: r.mean_confidence(UncertaintyKind::Epistemic, Outcome::TruePositive),
            aleatoric_tp_confidence: r.mean_confidence(UncertaintyKind::Aleatoric, Outcome::TruePositive),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: CVResult,
    pub uncertainty_aware: CVResult,
    pub baseline_summary: ArmSummary,
    pub uncertainty_aware_summary: ArmSummary,
    /// Uncertainty-aware minus baseline counts, band × outcome.
    pub epistemic_delta: [[i64; 4]; 3],
    pub aleatoric_delta: [[i64; 4]; 3],
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (name, sum) in [
            ("baseline", &self.baseline_summary),
            ("uncertainty-aware", &self.uncertainty_aware_summary),
        ] {
            let _ = writeln!(
                s,
                "{name:<18} balanced accuracy {:.4}  TP confidence epistemic {}  aleatoric {}",
                sum.mean_balanced_accuracy,
                fmt_opt(sum.epistemic_tp_confidence),
                fmt_opt(sum.aleatoric_tp_confidence)
            );
        }
        for (title, base, ua, delta) in [
            ("epistemic", &self.baseline.epistemic, &self.uncertainty_aware.epistemic, &self.epistemic_delta),
            ("aleatoric", &self.baseline.aleatoric, &self.uncertainty_aware.aleatoric, &self.aleatoric_delta),
        ] {
            let _ = writeln!(s, "{title} confidence (baseline -> uncertainty-aware)");
            let _ = writeln!(s, "{:<10} {:>12} {:>12} {:>12} {:>12}", "band", "TP", "FN", "FP", "TN");
            for (b, label) in BAND_LABELS.iter().enumerate() {
                let _ = write!(s, "{label:<10}");
                for o in 0..4 {
                    let cell = format!("{}->{} ({:+})", base.counts[b][o], ua.counts[b][o], delta[b][o]);
                    let _ = write!(s, " {cell:>12}");
                }
                s.push('\n');
            }
        }
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.2}"))
}

/// Runs the baseline arm, then the uncertainty-aware arm with the same folds
/// and seeds.
pub fn compare_models(dataset: &Dataset, grid: &Grid, cfg: &CompareConfig) -> Result<Comparison, HarnessError> {
    let base = nested_cv_run(dataset, grid, &cfg.cv, TrainMode::Baseline, None)?;
    let warm = cfg.warm_start.then_some(base.models.as_slice());
    let ua = nested_cv_run(dataset, grid, &cfg.cv, TrainMode::UncertaintyAware, warm)?.result;
    let baseline = base.result;
    Ok(Comparison {
        baseline_summary: ArmSummary::of(&baseline),
        uncertainty_aware_summary: ArmSummary::of(&ua),
        epistemic_delta: baseline.epistemic.delta(&ua.epistemic),
        aleatoric_delta: baseline.aleatoric.delta(&ua.aleatoric),
        baseline,
        uncertainty_aware: ua,
    })
}
