//! Run configuration file.
//!
//! ```toml
//! [gen]
//! n_subjects = 73
//!
//! [train]
//! epochs = 300
//! lr_schedule = { kind = "exp_decay", start = 1e-2, end = 1e-8 }
//! weights = { beta = 0.1, gamma = 0.6, alpha = 0.0, margin = 0.6 }
//!
//! [grid]
//! beta = [0.001, 0.1]
//!
//! [eval]
//! n_samples = 20
//! ```
//!
//! Every section and key is optional; missing keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cv::{CompareConfig, CvConfig, Grid};
use super::train::TrainConfig;
use super::HarnessError;
use crate::data::GenConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub n_samples: usize,
    pub jitter: f64,
    pub warm_start: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        let cv = CvConfig::default();
        Self {
            outer_folds: cv.outer_folds,
            inner_folds: cv.inner_folds,
            n_samples: cv.n_samples,
            jitter: cv.jitter,
            warm_start: CompareConfig::default().warm_start,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub grid: Grid,
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies one master seed to every seeded section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.gen.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            train: self.train.clone(),
            outer_folds: self.eval.outer_folds,
            inner_folds: self.eval.inner_folds,
            n_samples: self.eval.n_samples,
            jitter: self.eval.jitter,
        }
    }

    pub fn compare_config(&self) -> CompareConfig {
        CompareConfig {
            cv: self.cv_config(),
            warm_start: self.eval.warm_start,
        }
    }
}

impl Grid {
    /// Parses a grid file: the keys of a `[grid]` section at top level.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let grid: Grid = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}
