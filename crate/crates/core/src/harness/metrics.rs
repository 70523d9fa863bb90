use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::losses::Outcome;

/// Confusion-matrix counts, in TP, FN, FP, TN order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(predictions: &[bool], labels: &[bool]) -> Result<Self, HarnessError> {
        if predictions.len() != labels.len() {
            return Err(HarnessError::InvalidInput(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match Outcome::of(p, y) {
                Outcome::TruePositive => c.tp += 1,
                Outcome::FalseNegative => c.fn_ += 1,
                Outcome::FalsePositive => c.fp += 1,
                Outcome::TrueNegative => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.tp, self.fn_, self.fp, self.tn]
    }

    pub fn sensitivity(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }

    pub fn specificity(&self) -> Option<f64> {
        let neg = self.tn + self.fp;
        (neg > 0).then(|| self.tn as f64 / neg as f64)
    }

    pub fn balanced_accuracy(&self) -> Result<f64, HarnessError> {
        match (self.sensitivity(), self.specificity()) {
            (Some(se), Some(sp)) => Ok(0.5 * (se + sp)),
            _ => Err(HarnessError::UndefinedMetric(
                "balanced accuracy needs both positive and negative labels",
            )),
        }
    }
}

/// Mean of sensitivity and specificity.
pub fn balanced_accuracy(predictions: &[bool], labels: &[bool]) -> Result<f64, HarnessError> {
    Confusion::from_predictions(predictions, labels)?.balanced_accuracy()
}
