//! Shared fixtures for the benchmarks.

use uaware_core::data::generate_dataset;
use uaware_core::harness::TrainConfig;
use uaware_core::model::{ArchConfig, ModelConfig};
use uaware_core::{BatchOutcome, Dataset, GenConfig, ModelParams, Tensor};

/// Deterministic pseudo-random values in `[-1, 1)`.
pub fn filled(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

/// The 73-subject desk dataset.
pub fn desk_dataset() -> Dataset {
    generate_dataset(&GenConfig::default()).expect("default configuration is valid")
}

pub fn desk_params(ds: &Dataset) -> ModelParams {
    let config = ModelConfig::new(ds.dims, ArchConfig::default()).expect("default architecture is valid");
    ModelParams::init(config, 1).expect("valid configuration")
}

pub fn one_epoch() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        seed: 1,
        ..Default::default()
    }
}

/// A batch of `n` alternating-label outcomes with every cell populated.
pub fn outcome(n: usize) -> BatchOutcome {
    let p: Vec<f64> = (0..n).map(|i| ((i * 37) % 100) as f64 / 100.0 + 0.005).collect();
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    BatchOutcome::new(p, labels).expect("valid probabilities")
}
