//! Training, cross-validated model selection, metrics and the gradient-check
//! suite.

mod config;
mod cv;
mod gradcheck;
mod metrics;
mod train;

pub use config::{EvalOptions, RunConfig};
pub use cv::{
    compare_models, nested_cv, nested_cv_run, stratified_folds, ArmSummary, CVResult, Comparison,
    CompareConfig, CvConfig, CvRun, FoldModels, FoldResult, Grid, GridPoint, InnerSplit,
    SubjectPrediction,
};
pub use gradcheck::{
    run_gradcheck_suite, GradcheckEntry, GradcheckReport, GRADCHECK_EPS, GRADCHECK_TOLERANCE,
};
pub use metrics::{balanced_accuracy, Confusion};
pub use train::{
    predict_labels, train, train_from, EpochLoss, LrSchedule, TrainConfig, TrainMode, TrainOutput,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::losses::LossError;
use crate::model::ModelError;
use crate::uncertainty::UncertaintyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),
    #[error("training diverged at epoch {epoch}: {term} is not finite")]
    Divergence { epoch: usize, term: &'static str },
    #[error("stratification failed: {0}")]
    Stratification(String),
    #[error("fold {fold} leaks test ids into training: {ids:?}")]
    Leakage { fold: usize, ids: Vec<String> },
}

impl HarnessError {
    /// Failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HarnessError::Divergence { .. }
                | HarnessError::Autodiff(AutodiffError::Domain { .. })
                | HarnessError::Loss(LossError::Autodiff(AutodiffError::Domain { .. }))
        )
    }
}
