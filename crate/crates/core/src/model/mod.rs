//! Frame VAE with a classifier head on the concatenated per-frame latents.
//!
//! Every frame is flattened to a one-hot vector and encoded independently:
//!
//! ```text
//! frame ─ dense+relu ─┬─ dense → mu      ┐
//!                     └─ dense → logvar  ┴─ z ─ dense+relu ─ dense → class logits per pixel
//!
//! [z_1 … z_T] ─ dense+relu ─ dense → softmax → (P+, P−)
//! ```
//!
//! Weights are stored `[in × out]` so a layer is `x·W + 1·b`.

mod checkpoint;

pub use checkpoint::{read_checkpoint, read_checkpoint_from, write_checkpoint, write_checkpoint_to, Checkpoint};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::data::{FrameDims, SegSequence};
use crate::rng::{rng_for, tag};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model input: {0}")]
    InvalidInput(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

/// Layer widths that are not dictated by the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub latent_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub clf_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            enc_hidden: 64,
            dec_hidden: 64,
            clf_hidden: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    pub n_classes: usize,
    pub n_frames: usize,
    pub latent_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub clf_hidden: usize,
}

impl ModelConfig {
    pub fn new(dims: FrameDims, arch: ArchConfig) -> Result<Self, ModelError> {
        let cfg = Self {
            frame_height: dims.height,
            frame_width: dims.width,
            n_classes: dims.n_classes,
            n_frames: dims.n_frames,
            latent_dim: arch.latent_dim,
            enc_hidden: arch.enc_hidden,
            dec_hidden: arch.dec_hidden,
            clf_hidden: arch.clf_hidden,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("frame_height", self.frame_height),
            ("frame_width", self.frame_width),
            ("n_classes", self.n_classes),
            ("n_frames", self.n_frames),
            ("latent_dim", self.latent_dim),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("clf_hidden", self.clf_hidden),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(ModelError::Config(format!("{name} must be at least 1"))),
            None => Ok(()),
        }
    }

    pub fn dims(&self) -> FrameDims {
        FrameDims {
            n_frames: self.n_frames,
            height: self.frame_height,
            width: self.frame_width,
            n_classes: self.n_classes,
        }
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            latent_dim: self.latent_dim,
            enc_hidden: self.enc_hidden,
            dec_hidden: self.dec_hidden,
            clf_hidden: self.clf_hidden,
        }
    }

    /// Length of a flattened one-hot frame.
    pub fn frame_len(&self) -> usize {
        self.frame_height * self.frame_width * self.n_classes
    }
}

/// Parameter tensors in declaration (and checkpoint) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamId {
    EncW,
    EncB,
    MuW,
    MuB,
    LogvarW,
    LogvarB,
    DecW1,
    DecB1,
    DecW2,
    DecB2,
    ClfW1,
    ClfB1,
    ClfW2,
    ClfB2,
}

impl ParamId {
    pub const ALL: [ParamId; 14] = [
        ParamId::EncW,
        ParamId::EncB,
        ParamId::MuW,
        ParamId::MuB,
        ParamId::LogvarW,
        ParamId::LogvarB,
        ParamId::DecW1,
        ParamId::DecB1,
        ParamId::DecW2,
        ParamId::DecB2,
        ParamId::ClfW1,
        ParamId::ClfB1,
        ParamId::ClfW2,
        ParamId::ClfB2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::EncW => "enc_w",
            ParamId::EncB => "enc_b",
            ParamId::MuW => "mu_w",
            ParamId::MuB => "mu_b",
            ParamId::LogvarW => "logvar_w",
            ParamId::LogvarB => "logvar_b",
            ParamId::DecW1 => "dec_w1",
            ParamId::DecB1 => "dec_b1",
            ParamId::DecW2 => "dec_w2",
            ParamId::DecB2 => "dec_b2",
            ParamId::ClfW1 => "clf_w1",
            ParamId::ClfB1 => "clf_b1",
            ParamId::ClfW2 => "clf_w2",
            ParamId::ClfB2 => "clf_b2",
        }
    }

    pub fn is_classifier(self) -> bool {
        matches!(
            self,
            ParamId::ClfW1 | ParamId::ClfB1 | ParamId::ClfW2 | ParamId::ClfB2
        )
    }

    fn is_bias(self) -> bool {
        matches!(
            self,
            ParamId::EncB
                | ParamId::MuB
                | ParamId::LogvarB
                | ParamId::DecB1
                | ParamId::DecB2
                | ParamId::ClfB1
                | ParamId::ClfB2
        )
    }

    pub fn shape(self, c: &ModelConfig) -> [usize; 2] {
        let frame = c.frame_len();
        let d = c.latent_dim;
        match self {
            ParamId::EncW => [frame, c.enc_hidden],
            ParamId::EncB => [1, c.enc_hidden],
            ParamId::MuW | ParamId::LogvarW => [c.enc_hidden, d],
            ParamId::MuB | ParamId::LogvarB => [1, d],
            ParamId::DecW1 => [d, c.dec_hidden],
            ParamId::DecB1 => [1, c.dec_hidden],
            ParamId::DecW2 => [c.dec_hidden, frame],
            ParamId::DecB2 => [1, frame],
            ParamId::ClfW1 => [c.n_frames * d, c.clf_hidden],
            ParamId::ClfB1 => [1, c.clf_hidden],
            ParamId::ClfW2 => [c.clf_hidden, 2],
            ParamId::ClfB2 => [1, 2],
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// All weights of encoder, decoder and classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_for(seed, &[tag::INIT]);
        let tensors = ParamId::ALL
            .iter()
            .map(|&id| {
                let shape = id.shape(&config);
                if id.is_bias() {
                    return Tensor::zeros(&shape);
                }
                let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let data = (0..shape[0] * shape[1])
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Tensor::new(shape.to_vec(), data).expect("shape matches data")
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let tensors = ParamId::ALL
            .iter()
            .map(|id| Tensor::zeros(&id.shape(&config)))
            .collect();
        Ok(Self { config, tensors })
    }

    /// Rebuilds parameters from tensors in [`ParamId::ALL`] order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        if tensors.len() != ParamId::ALL.len() {
            return Err(ModelError::Config(format!(
                "{} tensors, expected {}",
                tensors.len(),
                ParamId::ALL.len()
            )));
        }
        for (id, t) in ParamId::ALL.iter().zip(&tensors) {
            if t.shape() != id.shape(&config) {
                return Err(ModelError::Config(format!(
                    "{} has shape {:?}, expected {:?}",
                    id.name(),
                    t.shape(),
                    id.shape(&config)
                )));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.index()]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Copy of `self` with every non-classifier tensor taken from `other`.
    pub fn with_vae_from(&self, other: &ModelParams) -> Result<Self, ModelError> {
        let mut out = self.clone();
        for id in ParamId::ALL.iter().filter(|id| !id.is_classifier()) {
            let src = other.get(*id);
            if src.shape() != self.get(*id).shape() {
                return Err(ModelError::Config(format!(
                    "cannot warm-start {}: shape {:?} vs {:?}",
                    id.name(),
                    src.shape(),
                    self.get(*id).shape()
                )));
            }
            *out.get_mut(*id) = src.clone();
        }
        Ok(out)
    }

    /// Places every tensor on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound {
            config: self.config,
            vars,
        }
    }
}

/// Model parameters placed on a graph.
#[derive(Clone, Debug)]
pub struct Bound {
    config: ModelConfig,
    vars: Vec<Var>,
}

/// Where the classifier and decoder take their latents from.
#[derive(Clone, Copy, Debug)]
pub enum LatentMode<'a> {
    /// Posterior means.
    Mean,
    /// `mu + exp(logvar / 2) ⊙ noise`, with `noise` shaped `[rows × latent_dim]`.
    Sampled(&'a Tensor),
}

/// Graph nodes of a batch forward pass. Rows are subject-major: row
/// `b·T + t` is frame `t` of subject `b`.
#[derive(Clone, Debug)]
pub struct BatchForward {
    /// One-hot input frames, `[B·T × frame_len]`.
    pub input: Var,
    pub mu: Var,
    pub logvar: Var,
    pub latents: Var,
    pub recon_logits: Var,
    /// `[B × 2]`, column 0 is P+ and column 1 is P−.
    pub probs: Var,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    /// Rebinds one parameter to an existing node.
    pub fn replace(&mut self, id: ParamId, v: Var) {
        self.vars[id.index()] = v;
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn dense(&self, g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var, ModelError> {
        let rows = g.value(x).shape()[0];
        let xw = g.matmul(x, self.var(w))?;
        let ones = g.constant(Tensor::filled(&[rows, 1], 1.0));
        let bias = g.matmul(ones, self.var(b))?;
        Ok(g.add(xw, bias)?)
    }

    /// `[N × frame_len]` one-hot rows → `(mu, logvar)`, each `[N × d]`.
    pub fn encode(&self, g: &mut Graph, frames: Var) -> Result<(Var, Var), ModelError> {
        let h = self.dense(g, frames, ParamId::EncW, ParamId::EncB)?;
        let h = g.relu(h);
        let mu = self.dense(g, h, ParamId::MuW, ParamId::MuB)?;
        let logvar = self.dense(g, h, ParamId::LogvarW, ParamId::LogvarB)?;
        Ok((mu, logvar))
    }

    /// `[N × d]` latents → `[N × frame_len]` per-pixel class logits.
    pub fn decode(&self, g: &mut Graph, z: Var) -> Result<Var, ModelError> {
        let h = self.dense(g, z, ParamId::DecW1, ParamId::DecB1)?;
        let h = g.relu(h);
        self.dense(g, h, ParamId::DecW2, ParamId::DecB2)
    }

    /// `[B·T × d]` latents (subject-major) → `[B × 2]` class probabilities.
    pub fn classify(&self, g: &mut Graph, latents: Var) -> Result<Var, ModelError> {
        let width = self.config.n_frames * self.config.latent_dim;
        let n = g.value(latents).numel();
        if n % width != 0 {
            return Err(ModelError::InvalidInput(format!(
                "{n} latent values do not split into rows of {width}"
            )));
        }
        let flat = g.reshape(latents, &[n / width, width])?;
        let h = self.dense(g, flat, ParamId::ClfW1, ParamId::ClfB1)?;
        let h = g.relu(h);
        let logits = self.dense(g, h, ParamId::ClfW2, ParamId::ClfB2)?;
        Ok(g.softmax(logits)?)
    }

    /// Encodes all frames of `records`, picks latents per `mode`, decodes
    /// them and classifies each subject.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        records: &[&SegSequence],
        mode: LatentMode<'_>,
    ) -> Result<BatchForward, ModelError> {
        let input = one_hot_batch(&self.config, records)?;
        let x = g.constant(input);
        let (mu, logvar) = self.encode(g, x)?;
        let latents = match mode {
            LatentMode::Mean => mu,
            LatentMode::Sampled(noise) => reparameterize_graph(g, mu, logvar, noise)?,
        };
        let recon_logits = self.decode(g, latents)?;
        let probs = self.classify(g, latents)?;
        Ok(BatchForward {
            input: x,
            mu,
            logvar,
            latents,
            recon_logits,
            probs,
        })
    }
}

/// `z = mu + exp(logvar / 2) ⊙ noise` on the graph.
pub fn reparameterize_graph(
    g: &mut Graph,
    mu: Var,
    logvar: Var,
    noise: &Tensor,
) -> Result<Var, ModelError> {
    if noise.shape() != g.value(mu).shape() {
        return Err(ModelError::InvalidInput(format!(
            "noise shape {:?} does not match latent shape {:?}",
            noise.shape(),
            g.value(mu).shape()
        )));
    }
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let eps = g.constant(noise.clone());
    let scaled = g.mul(std, eps)?;
    Ok(g.add(mu, scaled)?)
}

/// Stacks the one-hot frames of `records` into `[B·T × frame_len]`.
pub fn one_hot_batch(config: &ModelConfig, records: &[&SegSequence]) -> Result<Tensor, ModelError> {
    if records.is_empty() {
        return Err(ModelError::InvalidInput("empty batch".into()));
    }
    let dims = config.dims();
    let mut data = Vec::with_capacity(records.len() * dims.n_frames * config.frame_len());
    for r in records {
        r.validate(&dims)
            .map_err(|e| ModelError::InvalidInput(e.to_string()))?;
        r.write_one_hot(dims.n_classes, &mut data);
    }
    Ok(Tensor::new(
        vec![records.len() * dims.n_frames, config.frame_len()],
        data,
    )?)
}

fn check_one_hot(frame: &Tensor, config: &ModelConfig) -> Result<(), ModelError> {
    let expected = [config.frame_height, config.frame_width, config.n_classes];
    if frame.shape() != expected {
        return Err(ModelError::InvalidInput(format!(
            "frame shape {:?}, expected {expected:?}",
            frame.shape()
        )));
    }
    for (pixel, probs) in frame.data().chunks(config.n_classes).enumerate() {
        let ones = probs.iter().filter(|&&v| v == 1.0).count();
        let zeros = probs.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != probs.len() {
            return Err(ModelError::InvalidInput(format!(
                "pixel {pixel} is not one-hot: {probs:?}"
            )));
        }
    }
    Ok(())
}

fn row(t: Tensor) -> Result<Tensor, ModelError> {
    let n = t.numel();
    Ok(t.reshape(&[n])?)
}

/// Encodes one `[H × W × C]` one-hot frame into `(mu, logvar)`, each `[d]`.
pub fn encode(frame: &Tensor, params: &ModelParams) -> Result<(Tensor, Tensor), ModelError> {
    check_one_hot(frame, params.config())?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(frame.reshape(&[1, params.config().frame_len()])?);
    let (mu, logvar) = bound.encode(&mut g, x)?;
    Ok((row(g.value(mu).clone())?, row(g.value(logvar).clone())?))
}

/// `mu + exp(logvar / 2) ⊙ noise`, elementwise.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, noise: &Tensor) -> Result<Tensor, ModelError> {
    if mu.shape() != logvar.shape() || mu.shape() != noise.shape() {
        return Err(ModelError::InvalidInput(format!(
            "shapes disagree: mu {:?}, logvar {:?}, noise {:?}",
            mu.shape(),
            logvar.shape(),
            noise.shape()
        )));
    }
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(noise.data())
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect();
    Ok(Tensor::new(mu.shape().to_vec(), data)?)
}

/// Decodes a `[d]` latent into `[H × W × C]` class logits.
pub fn decode(z: &Tensor, params: &ModelParams) -> Result<Tensor, ModelError> {
    let c = params.config();
    if z.numel() != c.latent_dim || !z.is_finite() {
        return Err(ModelError::InvalidInput(format!(
            "latent {z:?} is not {} finite values",
            c.latent_dim
        )));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let zv = g.constant(z.reshape(&[1, c.latent_dim])?);
    let logits = bound.decode(&mut g, zv)?;
    Ok(g.value(logits).reshape(&[c.frame_height, c.frame_width, c.n_classes])?)
}

/// Class probabilities `(P+, P−)` for one subject's `[T × d]` latents.
pub fn classify(latents: &Tensor, params: &ModelParams) -> Result<(f64, f64), ModelError> {
    let c = params.config();
    if latents.numel() != c.n_frames * c.latent_dim {
        return Err(ModelError::InvalidInput(format!(
            "latents shape {:?}, expected [{}, {}]",
            latents.shape(),
            c.n_frames,
            c.latent_dim
        )));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let z = g.constant(latents.reshape(&[c.n_frames, c.latent_dim])?);
    let probs = bound.classify(&mut g, z)?;
    let p = g.value(probs).data();
    Ok((p[0], p[1]))
}

/// Predicted class from P+: positive only when strictly above one half.
pub fn predicted_positive(p_pos: f64) -> bool {
    p_pos > 0.5
}

/// Per-subject latent choice for [`forward_subject`].
#[derive(Clone, Copy, Debug)]
pub enum SubjectMode<'a> {
    Mean,
    /// Standard-normal draws shaped `[T × d]`.
    Sampled(&'a Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectForward {
    /// `[T × d]`
    pub mu: Tensor,
    /// `[T × d]`
    pub logvar: Tensor,
    /// `[T × H × W × C]`
    pub recon_logits: Tensor,
    pub p_pos: f64,
    pub p_neg: f64,
}

impl SubjectForward {
    pub fn predicted_positive(&self) -> bool {
        predicted_positive(self.p_pos)
    }
}

pub fn forward_subject(
    record: &SegSequence,
    params: &ModelParams,
    mode: SubjectMode<'_>,
) -> Result<SubjectForward, ModelError> {
    let c = params.config();
    if record.n_frames() != c.n_frames {
        return Err(ModelError::InvalidInput(format!(
            "record {} has {} frames, model expects {}",
            record.id,
            record.n_frames(),
            c.n_frames
        )));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let mode = match mode {
        SubjectMode::Mean => LatentMode::Mean,
        SubjectMode::Sampled(noise) => LatentMode::Sampled(noise),
    };
    let fwd = bound.forward_batch(&mut g, &[record], mode)?;
    let p = g.value(fwd.probs).data();
    Ok(SubjectForward {
        mu: g.value(fwd.mu).clone(),
        logvar: g.value(fwd.logvar).clone(),
        recon_logits: g.value(fwd.recon_logits).reshape(&[
            c.n_frames,
            c.frame_height,
            c.frame_width,
            c.n_classes,
        ])?,
        p_pos: p[0],
        p_neg: p[1],
    })
}

/// Mean-mode P+ for each record, without decoding.
pub fn predict_batch(params: &ModelParams, records: &[&SegSequence]) -> Result<Vec<f64>, ModelError> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(one_hot_batch(params.config(), records)?);
    let (mu, _) = bound.encode(&mut g, x)?;
    let probs = bound.classify(&mut g, mu)?;
    Ok(g.value(probs).data().chunks(2).map(|p| p[0]).collect())
}

#[cfg(test)]
mod tests;
