use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::autodiff::{Graph, Tensor};
use crate::data::{FrameDims, SegSequence};
use crate::losses::{total_loss, LossBreakdown, LossWeights};
use crate::model::{predict_batch, predicted_positive, ArchConfig, LatentMode, ModelConfig, ModelParams, ParamId};
use crate::rng::{derive_seed, rng_for, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Uncertainty term disabled (alpha forced to 0).
    Baseline,
    #[serde(alias = "ua")]
    UncertaintyAware,
}

/// Learning-rate policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    /// `lr_vae` for encoder/decoder tensors, `lr_clf` for classifier tensors.
    Constant,
    /// Both groups decay geometrically from `start` at the first epoch to
    /// `end` at the last.
    ExpDecay { start: f64, end: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_vae: f64,
    pub lr_clf: f64,
    pub lr_schedule: LrSchedule,
    pub weights: LossWeights,
    pub mode: TrainMode,
    pub arch: ArchConfig,
    /// Train on reparameterized latent samples; when false the classifier and
    /// decoder see the posterior means and the objective is deterministic.
    pub sample_latents: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 8,
            lr_vae: 1e-3,
            lr_clf: 1e-4,
            lr_schedule: LrSchedule::Constant,
            weights: LossWeights::default(),
            mode: TrainMode::UncertaintyAware,
            arch: ArchConfig::default(),
            sample_latents: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |what: String| Err(HarnessError::Config(what));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        for (name, lr) in [("lr_vae", self.lr_vae), ("lr_clf", self.lr_clf)] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} = {lr} must be positive"));
            }
        }
        if let LrSchedule::ExpDecay { start, end } = self.lr_schedule {
            if !(start.is_finite() && end.is_finite() && start > 0.0 && end > 0.0) {
                return bad(format!("decay from {start} to {end} must use positive rates"));
            }
        }
        self.weights.validate()?;
        Ok(())
    }

    /// Loss weights actually used: baseline mode zeroes alpha.
    pub fn effective_weights(&self) -> LossWeights {
        match self.mode {
            TrainMode::Baseline => LossWeights {
                alpha: 0.0,
                ..self.weights
            },
            TrainMode::UncertaintyAware => self.weights,
        }
    }

    fn rates(&self, epoch: usize) -> (f64, f64) {
        match self.lr_schedule {
            LrSchedule::Constant => (self.lr_vae, self.lr_clf),
            LrSchedule::ExpDecay { start, end } => {
                let span = self.epochs.saturating_sub(1).max(1) as f64;
                let lr = start * (end / start).powf(epoch as f64 / span);
                (lr, lr)
            }
        }
    }
}

/// Per-epoch means of every loss term over the epoch's batches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub trace: Vec<EpochLoss>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam state for every parameter tensor.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &[Option<Tensor>], rates: (f64, f64)) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for (k, &id) in ParamId::ALL.iter().enumerate() {
            let Some(g) = &grads[k] else { continue };
            let lr = if id.is_classifier() { rates.1 } else { rates.0 };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let w = params.get_mut(id).data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Trains on `records` from a fresh initialization derived from `cfg.seed`.
pub fn train(
    records: &[&SegSequence],
    dims: FrameDims,
    cfg: &TrainConfig,
) -> Result<TrainOutput, HarnessError> {
    let config = ModelConfig::new(dims, cfg.arch)?;
    let init = ModelParams::init(config, derive_seed(cfg.seed, &[tag::TRAIN]))?;
    train_from(records, cfg, init)
}

/// Trains on `records` starting from `init`.
pub fn train_from(
    records: &[&SegSequence],
    cfg: &TrainConfig,
    init: ModelParams,
) -> Result<TrainOutput, HarnessError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(HarnessError::InvalidInput("empty training set".into()));
    }
    let dims = init.config().dims();
    for r in records {
        r.validate(&dims)
            .map_err(|e| HarnessError::InvalidInput(e.to_string()))?;
    }
    let weights = cfg.effective_weights();
    let (t, d) = (dims.n_frames, init.config().latent_dim);
    let mut params = init;
    let mut adam = Adam::new(&params);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(cfg.seed, &[tag::TRAIN, epoch as u64]);
        order.shuffle(&mut rng);
        let rates = cfg.rates(epoch);
        let mut sum = LossBreakdown::default();
        let mut n_batches = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SegSequence> = chunk.iter().map(|&i| records[i]).collect();
            let labels: Vec<bool> = batch.iter().map(|r| r.label).collect();
            let noise = cfg.sample_latents.then(|| {
                let n = batch.len() * t * d;
                let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                Tensor::new(vec![batch.len() * t, d], data).expect("noise shape")
            });

            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let mode = match &noise {
                Some(n) => LatentMode::Sampled(n),
                None => LatentMode::Mean,
            };
            let fwd = bound.forward_batch(&mut g, &batch, mode)?;
            let (loss, parts, _) = total_loss(&mut g, &fwd, &labels, &weights, dims.n_classes)?;
            if let Some(term) = parts.first_non_finite() {
                return Err(HarnessError::Divergence { epoch, term });
            }
            let grads = g.backward(loss)?;
            let per_param: Vec<Option<Tensor>> = ParamId::ALL
                .iter()
                .map(|&id| grads.get(bound.var(id)).cloned())
                .collect();
            adam.update(&mut params, &per_param, rates);

            for (acc, v) in [
                (&mut sum.l_re, parts.l_re),
                (&mut sum.l_kl, parts.l_kl),
                (&mut sum.l_c, parts.l_c),
                (&mut sum.l_u, parts.l_u),
                (&mut sum.l_total, parts.l_total),
            ] {
                *acc += v;
            }
            n_batches += 1;
        }
        if !params.is_finite() {
            return Err(HarnessError::Divergence {
                epoch,
                term: "parameters",
            });
        }
        let k = n_batches as f64;
        trace.push(EpochLoss {
            epoch,
            loss: LossBreakdown {
                l_re: sum.l_re / k,
                l_kl: sum.l_kl / k,
                l_c: sum.l_c / k,
                l_u: sum.l_u / k,
                l_total: sum.l_total / k,
            },
        });
    }
    Ok(TrainOutput { params, trace })
}

/// Mean-mode predicted classes.
pub fn predict_labels(params: &ModelParams, records: &[&SegSequence]) -> Result<Vec<bool>, HarnessError> {
    Ok(predict_batch(params, records)?
        .into_iter()
        .map(predicted_positive)
        .collect())
}
