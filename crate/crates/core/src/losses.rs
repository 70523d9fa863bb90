//! Training objective: reconstruction, KL, classification and the pairwise
//! uncertainty-aware margin term.
//!
//! ```text
//! total = recon + beta * kl + gamma * classification + alpha * uncertainty
//!
//! uncertainty = 1/N_FP * Σ_{i∈FP, j∈TP} max(P+_i − P+_j + m, 0)
//!             + 1/N_FN * Σ_{i∈FN, j∈TN} max(P−_i − P−_j + m, 0)
//! ```
//!
//! Each half of the uncertainty term is 0 when its set of incorrect
//! predictions is empty. The TP/FP/TN/FN partition is read off the current
//! predictions and carries no gradient; gradients flow into both the
//! incorrect and the correct probability of every hinge pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::model::{predicted_positive, BatchForward};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid loss input: {0}")]
    InvalidInput(String),
    #[error("loss weight {name} = {value} {reason}")]
    Weight {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

/// Weights of the composite objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// KL weight.
    pub beta: f64,
    /// Classification weight.
    pub gamma: f64,
    /// Uncertainty-aware term weight.
    pub alpha: f64,
    /// Hinge margin.
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::UNCERTAINTY_AWARE_REFERENCE
    }
}

/// Closed search ranges for the hyperparameter grid.
pub const BETA_RANGE: (f64, f64) = (0.001, 2.0);
pub const GAMMA_RANGE: (f64, f64) = (0.0, 2.0);
pub const ALPHA_RANGE: (f64, f64) = (0.01, 2.0);
pub const MARGIN_RANGE: (f64, f64) = (0.01, 1.0);

impl LossWeights {
    /// Reference optimum reported for the baseline model.
    pub const BASELINE_REFERENCE: LossWeights = LossWeights {
        beta: 0.1,
        gamma: 0.6,
        alpha: 0.0,
        margin: 0.0,
    };

    /// Reference optimum reported for the uncertainty-aware model.
    pub const UNCERTAINTY_AWARE_REFERENCE: LossWeights = LossWeights {
        beta: 0.001,
        gamma: 0.5,
        alpha: 0.05,
        margin: 0.6,
    };

    /// All weights finite and non-negative.
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, value) in self.named() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(LossError::Weight {
                    name,
                    value,
                    reason: "must be finite and non-negative",
                });
            }
        }
        Ok(())
    }

    /// Checks every weight against the grid-search ranges. With
    /// `uncertainty_aware == false` the alpha and margin ranges are skipped,
    /// since the baseline runs with alpha fixed at 0.
    pub fn validate_search_range(&self, uncertainty_aware: bool) -> Result<(), LossError> {
        self.validate()?;
        let mut checks = vec![("beta", self.beta, BETA_RANGE), ("gamma", self.gamma, GAMMA_RANGE)];
        if uncertainty_aware {
            checks.push(("alpha", self.alpha, ALPHA_RANGE));
            checks.push(("margin", self.margin, MARGIN_RANGE));
        }
        for (name, value, (lo, hi)) in checks {
            if !(lo..=hi).contains(&value) {
                return Err(LossError::Weight {
                    name,
                    value,
                    reason: "outside the search range",
                });
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("margin", self.margin),
        ]
    }
}

/// Confusion-matrix cell of one prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FN")]
    FalseNegative,
    #[serde(rename = "FP")]
    FalsePositive,
    #[serde(rename = "TN")]
    TrueNegative,
}

impl Outcome {
    /// Column order of the banded tables.
    pub const ALL: [Outcome; 4] = [
        Outcome::TruePositive,
        Outcome::FalseNegative,
        Outcome::FalsePositive,
        Outcome::TrueNegative,
    ];

    pub fn of(predicted_positive: bool, label: bool) -> Self {
        match (predicted_positive, label) {
            (true, true) => Outcome::TruePositive,
            (false, true) => Outcome::FalseNegative,
            (true, false) => Outcome::FalsePositive,
            (false, false) => Outcome::TrueNegative,
        }
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            Outcome::TruePositive => "TP",
            Outcome::FalseNegative => "FN",
            Outcome::FalsePositive => "FP",
            Outcome::TrueNegative => "TN",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-sample probabilities of a batch and their TP/FP/TN/FN partition.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutcome {
    p_pos: Vec<f64>,
    p_neg: Vec<f64>,
    labels: Vec<bool>,
    predicted: Vec<bool>,
    cells: [Vec<usize>; 4],
}

impl BatchOutcome {
    /// Partition from P+ alone, with P− = 1 − P+.
    pub fn new(p_pos: Vec<f64>, labels: Vec<bool>) -> Result<Self, LossError> {
        let p_neg = p_pos.iter().map(|p| 1.0 - p).collect();
        Self::from_parts(p_pos, p_neg, labels)
    }

    /// Partition from a `[B × 2]` probability tensor (columns P+, P−).
    pub fn from_probs(probs: &Tensor, labels: &[bool]) -> Result<Self, LossError> {
        match probs.dims2() {
            Some((_, 2)) => {}
            _ => {
                return Err(LossError::InvalidInput(format!(
                    "probabilities must be [B x 2], got {:?}",
                    probs.shape()
                )))
            }
        }
        let (pos, neg) = probs.data().chunks(2).map(|r| (r[0], r[1])).unzip();
        Self::from_parts(pos, neg, labels.to_vec())
    }

    fn from_parts(p_pos: Vec<f64>, p_neg: Vec<f64>, labels: Vec<bool>) -> Result<Self, LossError> {
        if p_pos.len() != labels.len() {
            return Err(LossError::InvalidInput(format!(
                "{} probabilities for {} labels",
                p_pos.len(),
                labels.len()
            )));
        }
        if let Some(p) = p_pos.iter().chain(&p_neg).find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(LossError::InvalidInput(format!("probability {p} outside [0, 1]")));
        }
        let predicted: Vec<bool> = p_pos.iter().map(|&p| predicted_positive(p)).collect();
        let mut cells: [Vec<usize>; 4] = Default::default();
        for (i, (&pred, &label)) in predicted.iter().zip(&labels).enumerate() {
            cells[Outcome::of(pred, label).index()].push(i);
        }
        Ok(Self {
            p_pos,
            p_neg,
            labels,
            predicted,
            cells,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn p_pos(&self) -> &[f64] {
        &self.p_pos
    }

    pub fn p_neg(&self) -> &[f64] {
        &self.p_neg
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn predicted(&self) -> &[bool] {
        &self.predicted
    }

    /// Sample indices falling in `cell`, ascending.
    pub fn indices(&self, cell: Outcome) -> &[usize] {
        &self.cells[cell.index()]
    }

    pub fn n_fp(&self) -> usize {
        self.indices(Outcome::FalsePositive).len()
    }

    pub fn n_fn(&self) -> usize {
        self.indices(Outcome::FalseNegative).len()
    }

    /// `[B × 2]` probability tensor matching this outcome.
    pub fn probs_tensor(&self) -> Result<Tensor, LossError> {
        let data = self
            .p_pos
            .iter()
            .zip(&self.p_neg)
            .flat_map(|(&p, &n)| [p, n])
            .collect();
        Ok(Tensor::new(vec![self.len().max(1), 2], data)?)
    }
}

/// Per-term values of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_re: f64,
    pub l_kl: f64,
    pub l_c: f64,
    pub l_u: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("l_re", self.l_re),
            ("l_kl", self.l_kl),
            ("l_c", self.l_c),
            ("l_u", self.l_u),
            ("l_total", self.l_total),
        ]
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.terms()
            .iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
    }
}

/// Mean per-pixel categorical cross-entropy between class `logits` and a
/// one-hot `target` of the same shape; the last `n_classes` values of the
/// flattened layout belong to one pixel.
pub fn recon_loss(
    g: &mut Graph,
    logits: Var,
    target: &Tensor,
    n_classes: usize,
) -> Result<Var, LossError> {
    let shape = g.value(logits).shape().to_vec();
    if shape != target.shape() {
        return Err(LossError::InvalidInput(format!(
            "logits {shape:?} vs target {:?}",
            target.shape()
        )));
    }
    if n_classes == 0 || target.numel() % n_classes != 0 {
        return Err(LossError::InvalidInput(format!(
            "{} values do not split into pixels of {n_classes} classes",
            target.numel()
        )));
    }
    let pixels = target.numel() / n_classes;
    for (i, px) in target.data().chunks(n_classes).enumerate() {
        if px.iter().filter(|&&v| v == 1.0).count() != 1 || px.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(LossError::InvalidInput(format!("target pixel {i} is not one-hot")));
        }
    }
    let flat = g.reshape(logits, &[pixels, n_classes])?;
    let logp = g.log_softmax(flat)?;
    let t = g.constant(target.reshape(&[pixels, n_classes])?);
    let picked = g.mul(logp, t)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / pixels as f64))
}

/// KL divergence of `N(mu, exp(logvar))` from the unit Gaussian, summed over
/// latent dimensions and averaged over rows (frames).
pub fn kl_loss(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var, LossError> {
    let rows = g.value(mu).shape()[0];
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar);
    let a = g.add(mu2, var)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_scalar(b, -1.0);
    let total = g.sum(c);
    Ok(g.scale(total, 0.5 / rows as f64))
}

/// Batch-mean binary cross-entropy on `[B × 2]` probabilities, clamped to
/// `[1e-12, 1 − 1e-12]`.
pub fn classification_loss(g: &mut Graph, probs: Var, labels: &[bool]) -> Result<Var, LossError> {
    let b = match g.value(probs).dims2() {
        Some((b, 2)) if b == labels.len() => b,
        _ => {
            return Err(LossError::InvalidInput(format!(
                "probabilities {:?} for {} labels",
                g.value(probs).shape(),
                labels.len()
            )))
        }
    };
    let clamped = g.clamp(probs, PROB_FLOOR, 1.0 - PROB_FLOOR);
    let logp = g.log(clamped)?;
    let onehot = labels
        .iter()
        .flat_map(|&y| if y { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect();
    let t = g.constant(Tensor::new(vec![b, 2], onehot)?);
    let picked = g.mul(logp, t)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / b as f64))
}

/// `1/|incorrect| · Σ_{i∈incorrect, j∈correct} max(p_i − p_j + m, 0)` for a
/// `[B × 1]` probability column, or `None` when there are no pairs.
fn hinge_pairs(
    g: &mut Graph,
    column: Var,
    incorrect: &[usize],
    correct: &[usize],
    margin: f64,
) -> Result<Option<Var>, LossError> {
    if incorrect.is_empty() || correct.is_empty() {
        return Ok(None);
    }
    let b = g.value(column).shape()[0];
    let n_pairs = incorrect.len() * correct.len();
    // Row (i, j) of the selector picks p_i − p_j.
    let mut sel = vec![0.0; n_pairs * b];
    for (r, (&i, &j)) in incorrect
        .iter()
        .flat_map(|i| correct.iter().map(move |j| (i, j)))
        .enumerate()
    {
        sel[r * b + i] += 1.0;
        sel[r * b + j] -= 1.0;
    }
    let sel = g.constant(Tensor::new(vec![n_pairs, b], sel)?);
    let diff = g.matmul(sel, column)?;
    let shifted = g.add_scalar(diff, margin);
    let hinge = g.max0(shifted);
    let total = g.sum(hinge);
    Ok(Some(g.scale(total, 1.0 / incorrect.len() as f64)))
}

/// Pairwise uncertainty-aware term on the graph. `probs` is the `[B × 2]`
/// node the partition in `outcome` was computed from.
pub fn uncertainty_loss(
    g: &mut Graph,
    probs: Var,
    outcome: &BatchOutcome,
    margin: f64,
) -> Result<Var, LossError> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(LossError::Weight {
            name: "margin",
            value: margin,
            reason: "must be finite and non-negative",
        });
    }
    match g.value(probs).dims2() {
        Some((b, 2)) if b == outcome.len() => {}
        _ => {
            return Err(LossError::InvalidInput(format!(
                "probabilities {:?} for a batch of {}",
                g.value(probs).shape(),
                outcome.len()
            )))
        }
    }
    let select = |g: &mut Graph, col: usize| -> Result<Var, LossError> {
        let e = if col == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
        let e = g.constant(Tensor::new(vec![2, 1], e.to_vec())?);
        Ok(g.matmul(probs, e)?)
    };
    let pos = select(g, 0)?;
    let fp_term = hinge_pairs(
        g,
        pos,
        outcome.indices(Outcome::FalsePositive),
        outcome.indices(Outcome::TruePositive),
        margin,
    )?;
    let neg = select(g, 1)?;
    let fn_term = hinge_pairs(
        g,
        neg,
        outcome.indices(Outcome::FalseNegative),
        outcome.indices(Outcome::TrueNegative),
        margin,
    )?;
    Ok(match (fp_term, fn_term) {
        (Some(a), Some(b)) => g.add(a, b)?,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => g.constant(Tensor::scalar(0.0)),
    })
}

/// Evaluates [`uncertainty_loss`] on the probabilities stored in `outcome`.
pub fn uncertainty_loss_value(outcome: &BatchOutcome, margin: f64) -> Result<f64, LossError> {
    if outcome.is_empty() {
        return Ok(0.0);
    }
    let mut g = Graph::new();
    let probs = g.constant(outcome.probs_tensor()?);
    let l = uncertainty_loss(&mut g, probs, outcome, margin)?;
    Ok(g.value(l).item())
}

/// Composite objective for one batch forward pass. Returns the scalar loss
/// node, the value of every term, and the partition used by the uncertainty
/// term.
pub fn total_loss(
    g: &mut Graph,
    fwd: &BatchForward,
    labels: &[bool],
    weights: &LossWeights,
    n_classes: usize,
) -> Result<(Var, LossBreakdown, BatchOutcome), LossError> {
    weights.validate()?;
    let target = g.value(fwd.input).clone();
    let re = recon_loss(g, fwd.recon_logits, &target, n_classes)?;
    let kl = kl_loss(g, fwd.mu, fwd.logvar)?;
    let c = classification_loss(g, fwd.probs, labels)?;
    let outcome = BatchOutcome::from_probs(g.value(fwd.probs), labels)?;
    let u = uncertainty_loss(g, fwd.probs, &outcome, weights.margin)?;

    let w_kl = g.scale(kl, weights.beta);
    let w_c = g.scale(c, weights.gamma);
    let w_u = g.scale(u, weights.alpha);
    let acc = g.add(re, w_kl)?;
    let acc = g.add(acc, w_c)?;
    let total = g.add(acc, w_u)?;

    let value = |v: Var| g.value(v).item();
    let breakdown = LossBreakdown {
        l_re: value(re),
        l_kl: value(kl),
        l_c: value(c),
        l_u: value(u),
        l_total: value(total),
    };
    Ok((total, breakdown, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(f: impl FnOnce(&mut Graph) -> Result<Var, LossError>) -> f64 {
        let mut g = Graph::new();
        let v = f(&mut g).unwrap();
        g.value(v).item()
    }

    #[test]
    fn recon_uniform_logits_give_ln_c() {
        let target = Tensor::new(vec![2, 4], vec![1., 0., 0., 0., 0., 0., 1., 0.]).unwrap();
        let l = eval(|g| {
            let x = g.constant(Tensor::zeros(&[2, 4]));
            recon_loss(g, x, &target, 4)
        });
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((l - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn recon_confident_correct_logits_approach_zero() {
        let target = Tensor::new(vec![1, 4], vec![0., 0., 1., 0.]).unwrap();
        let l = eval(|g| {
            let x = g.constant(Tensor::new(vec![1, 4], vec![0., 0., 1e3, 0.]).unwrap());
            recon_loss(g, x, &target, 4)
        });
        assert!(l >= 0.0 && l < 1e-12);
    }

    #[test]
    fn recon_rejects_shape_mismatch_and_bad_target() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 4]));
        assert!(recon_loss(&mut g, x, &Tensor::zeros(&[1, 4]), 4).is_err());
        assert!(recon_loss(&mut g, x, &Tensor::zeros(&[2, 4]), 4).is_err());
    }

    #[test]
    fn kl_closed_form_cases() {
        let zero = eval(|g| {
            let mu = g.constant(Tensor::zeros(&[3, 2]));
            let lv = g.constant(Tensor::zeros(&[3, 2]));
            kl_loss(g, mu, lv)
        });
        assert_eq!(zero, 0.0);
        let half = eval(|g| {
            let mu = g.constant(Tensor::filled(&[1, 1], 1.0));
            let lv = g.constant(Tensor::zeros(&[1, 1]));
            kl_loss(g, mu, lv)
        });
        assert_eq!(half, 0.5);
    }

    #[test]
    fn classification_loss_cases() {
        let bce = |p: f64, y: bool| {
            eval(|g| {
                let probs = g.constant(Tensor::new(vec![1, 2], vec![p, 1.0 - p]).unwrap());
                classification_loss(g, probs, &[y])
            })
        };
        assert!((bce(0.5, true) - 2f64.ln()).abs() < 1e-15);
        assert!((bce(0.5, false) - 0.6931).abs() < 1e-4);
        assert!(bce(1.0, true) < 1e-11);
        assert!(bce(0.0, false) < 1e-11);
        assert!((bce(0.8, false) - 1.6094).abs() < 1e-4);
        assert!((bce(0.8, false) + 0.2f64.ln()).abs() < 1e-12);
        // clamping keeps the loss finite
        assert!(bce(1.0, false).is_finite());
    }

    #[test]
    fn uncertainty_loss_worked_examples() {
        // one FP at 0.9, one TP at 0.7, margin 0.6
        let o = BatchOutcome::new(vec![0.9, 0.7], vec![false, true]).unwrap();
        assert!((uncertainty_loss_value(&o, 0.6).unwrap() - 0.8).abs() < 1e-12);

        // FPs {0.6, 0.8}, TPs {0.9, 0.55}, margin 0.2
        let o = BatchOutcome::new(vec![0.6, 0.8, 0.9, 0.55], vec![false, false, true, true]).unwrap();
        assert_eq!(o.n_fp(), 2);
        assert!((uncertainty_loss_value(&o, 0.2).unwrap() - 0.4).abs() < 1e-12);

        // one FN with P− = 0.8, one TN with P− = 0.95, margin 0.1
        let o = BatchOutcome::new(vec![0.2, 0.05], vec![true, false]).unwrap();
        assert_eq!(o.n_fn(), 1);
        assert_eq!(uncertainty_loss_value(&o, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn all_correct_batch_has_zero_uncertainty_loss() {
        let o = BatchOutcome::new(vec![0.9, 0.6, 0.2, 0.4], vec![true, true, false, false]).unwrap();
        assert_eq!(uncertainty_loss_value(&o, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn tie_at_one_half_is_negative() {
        let o = BatchOutcome::new(vec![0.5], vec![true]).unwrap();
        assert_eq!(o.indices(Outcome::FalseNegative), &[0]);
    }

    #[test]
    fn partition_covers_the_batch() {
        let o = BatchOutcome::new(vec![0.9, 0.1, 0.7, 0.3, 0.5], vec![true, true, false, false, false])
            .unwrap();
        let mut all: Vec<usize> = Outcome::ALL.iter().flat_map(|&c| o.indices(c).to_vec()).collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn weights_validation() {
        LossWeights::UNCERTAINTY_AWARE_REFERENCE
            .validate_search_range(true)
            .unwrap();
        LossWeights::BASELINE_REFERENCE
            .validate_search_range(false)
            .unwrap();
        let bad = LossWeights {
            alpha: 3.0,
            ..LossWeights::UNCERTAINTY_AWARE_REFERENCE
        };
        assert!(bad.validate_search_range(true).is_err());
        let neg = LossWeights {
            beta: -1.0,
            ..LossWeights::UNCERTAINTY_AWARE_REFERENCE
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn hinge_gradient_reaches_both_members_of_a_pair() {
        let o = BatchOutcome::new(vec![0.9, 0.7], vec![false, true]).unwrap();
        let mut g = Graph::new();
        let probs = g.param(o.probs_tensor().unwrap());
        let l = uncertainty_loss(&mut g, probs, &o, 0.6).unwrap();
        let grads = g.backward(l).unwrap();
        // d/dP+_fp = +1, d/dP+_tp = −1; P− columns untouched
        assert_eq!(grads.get(probs).unwrap().data(), &[1.0, 0.0, -1.0, 0.0]);
    }
}
