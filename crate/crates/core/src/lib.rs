//! Uncertainty-aware VAE classification of segmentation sequences.
//!
//! The crate bundles a small reverse-mode autodiff engine, a per-frame VAE
//! with a latent-space classifier, the composite training objective with a
//! pairwise confidence-margin term, Monte-Carlo confidence estimation, a
//! synthetic data generator and a nested cross-validation harness.

pub mod autodiff;
pub mod data;
pub mod harness;
pub mod losses;
pub mod model;
pub mod rng;
pub mod uncertainty;

pub use autodiff::{grad_check, grad_check_stats, AutodiffError, GradCheckStats, Graph, Tensor, Var};
pub use data::{Dataset, FrameDims, GenConfig, SegSequence};
pub use harness::{CVResult, Grid, HarnessError, TrainConfig, TrainMode};
pub use losses::{BatchOutcome, LossBreakdown, LossWeights, Outcome};
pub use model::{ModelConfig, ModelParams, SubjectForward};
pub use uncertainty::{BandedReport, ConfidenceResult, UncertaintyKind};
