//! Finite-difference verification of every graph op, every loss term and
//! the full training objective.
//!
//! Instances are drawn at random and rejected when they sit within `1e-3`
//! of a non-differentiable point (a hinge or ReLU kink, a clamp bound, or a
//! prediction at exactly one half, where the outcome partition flips).
//!
//! The objective is checked against its direct inputs and each model head
//! against its own outputs. Checking the objective through the whole model
//! at once puts components with gradients near the rounding noise of the
//! loss value under a relative bound they cannot meet.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::autodiff::{grad_check_stats, GradCheckStats, Graph, Tensor, Var};
use crate::data::{FrameDims, SegSequence, SubjectMeta};
use crate::losses::{
    classification_loss, kl_loss, recon_loss, total_loss, uncertainty_loss, BatchOutcome, LossWeights,
    ALPHA_RANGE, BETA_RANGE, GAMMA_RANGE, MARGIN_RANGE,
};
use crate::model::{
    one_hot_batch, reparameterize_graph, ArchConfig, BatchForward, LatentMode, ModelConfig, ModelParams, ParamId,
};
use crate::rng::rng_for;

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
const KINK_CLEARANCE: f64 = 1e-3;
const MAX_REJECTIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub instances: usize,
    /// Largest per-component relative error over all instances.
    pub max_error: f64,
    /// Largest relative error among components whose discrepancy exceeds
    /// the rounding floor of the central difference.
    pub max_error_above_rounding: f64,
}

impl GradcheckEntry {
    fn new(name: &str, instances: usize, worst: GradCheckStats) -> Self {
        Self {
            name: name.to_string(),
            instances,
            max_error: worst.max_rel_error,
            max_error_above_rounding: worst.max_rel_error_above_floor,
        }
    }

    /// Every component within tolerance.
    pub fn passed(&self) -> bool {
        self.max_error < GRADCHECK_TOLERANCE
    }

    /// Every component within tolerance or below the rounding floor.
    pub fn passed_above_rounding(&self) -> bool {
        self.max_error_above_rounding < GRADCHECK_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(GradcheckEntry::passed)
    }

    pub fn passed_above_rounding(&self) -> bool {
        self.entries.iter().all(GradcheckEntry::passed_above_rounding)
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_error).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:<28} {:>4} instances  max rel error {:.3e}  above rounding floor {:.3e}  {}",
                e.name,
                e.instances,
                e.max_error,
                e.max_error_above_rounding,
                match (e.passed(), e.passed_above_rounding()) {
                    (true, _) => "ok",
                    (false, true) => "ROUNDING",
                    (false, false) => "FAIL",
                }
            );
        }
        s
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

/// Normal draws with every entry at least `KINK_CLEARANCE` away from each
/// of `kinks`.
fn normal_clear(rng: &mut ChaCha8Rng, shape: &[usize], kinks: &[f64]) -> Tensor {
    let mut t = normal(rng, shape, 1.0);
    for v in t.data_mut() {
        while kinks.iter().any(|k| (*v - k).abs() < KINK_CLEARANCE) {
            *v = StandardNormal.sample(rng);
        }
    }
    t
}

type Builder<'a> = Box<dyn Fn(&mut Graph, Var) -> Result<Var, HarnessError> + 'a>;

/// `sum(w ⊙ y)` with fixed random `w`, so every output entry carries its own
/// weight.
fn project(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var, HarnessError> {
    let wv = g.constant(w.clone());
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

fn op_instance(name: &str, rng: &mut ChaCha8Rng) -> (Tensor, Builder<'static>) {
    const R: usize = 3;
    const C: usize = 4;
    let c = normal(rng, &[R, C], 1.0);
    let w_rc = normal(rng, &[R, C], 1.0);
    let kinked: &[f64] = match name {
        "relu" | "max0" => &[0.0],
        "clamp" => &[-0.5, 0.5],
        _ => &[],
    };
    let mut x = normal_clear(rng, &[R, C], kinked);
    if name == "log" {
        x.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
    }
    let elementwise = |f: fn(&mut Graph, Var, Var) -> Result<Var, HarnessError>| -> Builder<'static> {
        let (c, w) = (c.clone(), w_rc.clone());
        Box::new(move |g, x| {
            let cv = g.constant(c.clone());
            let y = f(g, x, cv)?;
            project(g, y, &w)
        })
    };
    let unary = |f: fn(&mut Graph, Var) -> Result<Var, HarnessError>| -> Builder<'static> {
        let w = w_rc.clone();
        Box::new(move |g, x| {
            let y = f(g, x)?;
            project(g, y, &w)
        })
    };
    let builder: Builder<'static> = match name {
        "add" => elementwise(|g, a, b| Ok(g.add(a, b)?)),
        "sub" => elementwise(|g, a, b| Ok(g.sub(b, a)?)),
        "mul" => elementwise(|g, a, b| Ok(g.mul(a, b)?)),
        "mul_self" => unary(|g, a| Ok(g.mul(a, a)?)),
        "matmul_left" => {
            let b = normal(rng, &[C, 2], 1.0);
            let w = normal(rng, &[R, 2], 1.0);
            Box::new(move |g, x| {
                let bv = g.constant(b.clone());
                let y = g.matmul(x, bv)?;
                project(g, y, &w)
            })
        }
        "matmul_right" => {
            let a = normal(rng, &[2, R], 1.0);
            let w = normal(rng, &[2, C], 1.0);
            Box::new(move |g, x| {
                let av = g.constant(a.clone());
                let y = g.matmul(av, x)?;
                project(g, y, &w)
            })
        }
        "scale" => unary(|g, a| Ok(g.scale(a, -1.7))),
        "add_scalar" => unary(|g, a| Ok(g.add_scalar(a, 0.3))),
        "relu" => unary(|g, a| Ok(g.relu(a))),
        "max0" => unary(|g, a| Ok(g.max0(a))),
        "sigmoid" => unary(|g, a| Ok(g.sigmoid(a))),
        "exp" => unary(|g, a| Ok(g.exp(a))),
        "log" => unary(|g, a| Ok(g.log(a)?)),
        "clamp" => unary(|g, a| Ok(g.clamp(a, -0.5, 0.5))),
        "softmax" => unary(|g, a| Ok(g.softmax(a)?)),
        "log_softmax" => unary(|g, a| Ok(g.log_softmax(a)?)),
        "sum" => Box::new(|g, x| {
            let y = g.mul(x, x)?;
            Ok(g.sum(y))
        }),
        "mean" => Box::new(|g, x| {
            let y = g.exp(x);
            Ok(g.mean(y))
        }),
        "concat_rows" | "concat_cols" => {
            let axis = usize::from(name == "concat_cols");
            let shape = if axis == 0 { [2 * R, C] } else { [R, 2 * C] };
            let w = normal(rng, &shape, 1.0);
            Box::new(move |g, x| {
                let cv = g.constant(c.clone());
                let y = g.concat(&[x, cv], axis)?;
                project(g, y, &w)
            })
        }
        "reshape" => {
            let w = normal(rng, &[C, R], 1.0);
            Box::new(move |g, x| {
                let y = g.reshape(x, &[C, R])?;
                project(g, y, &w)
            })
        }
        other => unreachable!("unknown op {other}"),
    };
    (x, builder)
}

const OPS: [&str; 21] = [
    "add",
    "sub",
    "mul",
    "mul_self",
    "matmul_left",
    "matmul_right",
    "scale",
    "add_scalar",
    "relu",
    "max0",
    "sigmoid",
    "exp",
    "log",
    "clamp",
    "softmax",
    "log_softmax",
    "sum",
    "mean",
    "concat_rows",
    "concat_cols",
    "reshape",
];

fn random_one_hot(rng: &mut ChaCha8Rng, pixels: usize, classes: usize) -> Tensor {
    let mut data = vec![0.0; pixels * classes];
    for p in 0..pixels {
        data[p * classes + rng.random_range(0..classes)] = 1.0;
    }
    Tensor::new(vec![pixels, classes], data).expect("positive shape")
}

/// Random batch logits with every class probability clear of one half and
/// at least one active hinge pair whose argument is clear of zero.
fn hinge_instance(rng: &mut ChaCha8Rng, batch: usize) -> Option<(Tensor, Vec<bool>, BatchOutcome, f64)> {
    let x = normal(rng, &[batch, 2], 1.5);
    let labels: Vec<bool> = (0..batch).map(|_| rng.random_bool(0.5)).collect();
    let margin = rng.random_range(MARGIN_RANGE.0..=MARGIN_RANGE.1);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let probs = g.softmax(xv).ok()?;
    let outcome = BatchOutcome::from_probs(g.value(probs), &labels).ok()?;
    if outcome.p_pos().iter().any(|p| (p - 0.5).abs() < KINK_CLEARANCE) {
        return None;
    }
    if !hinges_clear(&outcome, margin) {
        return None;
    }
    Some((x, labels, outcome, margin))
}

/// True when some hinge is active and none sits within the clearance of its
/// kink.
fn hinges_clear(o: &BatchOutcome, margin: f64) -> bool {
    use crate::losses::Outcome::*;
    let mut active = false;
    for (bad, good, p) in [
        (FalsePositive, TruePositive, o.p_pos()),
        (FalseNegative, TrueNegative, o.p_neg()),
    ] {
        for &i in o.indices(bad) {
            for &j in o.indices(good) {
                let arg = p[i] - p[j] + margin;
                if arg.abs() < KINK_CLEARANCE {
                    return false;
                }
                active |= arg > 0.0;
            }
        }
    }
    active
}

fn loss_checks(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Tensor, Builder<'static>)> {
    let mut out: Vec<(&'static str, Tensor, Builder<'static>)> = Vec::new();

    let target = random_one_hot(rng, 6, 4);
    out.push((
        "recon_loss",
        normal(rng, &[6, 4], 2.0),
        Box::new(move |g, x| Ok(recon_loss(g, x, &target, 4)?)),
    ));

    let lv = normal(rng, &[3, 2], 0.5);
    out.push((
        "kl_loss/mu",
        normal(rng, &[3, 2], 1.0),
        Box::new(move |g, x| {
            let l = g.constant(lv.clone());
            Ok(kl_loss(g, x, l)?)
        }),
    ));
    let mu = normal(rng, &[3, 2], 1.0);
    out.push((
        "kl_loss/logvar",
        normal(rng, &[3, 2], 0.5),
        Box::new(move |g, x| {
            let m = g.constant(mu.clone());
            Ok(kl_loss(g, m, x)?)
        }),
    ));

    let labels: Vec<bool> = (0..5).map(|_| rng.random_bool(0.5)).collect();
    out.push((
        "classification_loss",
        normal(rng, &[5, 2], 1.5),
        Box::new(move |g, x| {
            let p = g.softmax(x)?;
            Ok(classification_loss(g, p, &labels)?)
        }),
    ));

    let (x, _, outcome, margin) = loop {
        if let Some(inst) = hinge_instance(rng, 8) {
            break inst;
        }
    };
    out.push((
        "uncertainty_loss",
        x,
        Box::new(move |g, x| {
            let p = g.softmax(x)?;
            Ok(uncertainty_loss(g, p, &outcome, margin)?)
        }),
    ));
    out
}

fn random_weights(rng: &mut ChaCha8Rng) -> LossWeights {
    let mut draw = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
    LossWeights {
        beta: draw(BETA_RANGE),
        gamma: draw(GAMMA_RANGE),
        alpha: draw(ALPHA_RANGE),
        margin: draw(MARGIN_RANGE),
    }
}

const BATCH: usize = 6;
const FRAMES: usize = 2;
const SIDE: usize = 3;
const CLASSES: usize = 4;

/// Inputs of the composite objective for one batch: reconstruction logits,
/// posterior moments and classifier logits.
struct ObjectiveInstance {
    target: Tensor,
    recon: Tensor,
    mu: Tensor,
    logvar: Tensor,
    class_logits: Tensor,
    labels: Vec<bool>,
    weights: LossWeights,
}

fn objective_instance(rng: &mut ChaCha8Rng) -> Option<ObjectiveInstance> {
    let rows = BATCH * FRAMES;
    let frame_len = SIDE * SIDE * CLASSES;
    let target = random_one_hot(rng, rows * SIDE * SIDE, CLASSES)
        .reshape(&[rows, frame_len])
        .ok()?;
    let weights = random_weights(rng);
    let (class_logits, labels, _, _) = loop {
        let inst = hinge_instance(rng, BATCH)?;
        if hinges_clear(&inst.2, weights.margin) {
            break inst;
        }
    };
    Some(ObjectiveInstance {
        target,
        recon: normal(rng, &[rows, frame_len], 1.5),
        mu: normal(rng, &[rows, 2], 1.0),
        logvar: normal(rng, &[rows, 2], 0.5),
        class_logits,
        labels,
        weights,
    })
}

#[derive(Clone, Copy)]
enum ObjectiveInput {
    Recon,
    Mu,
    Logvar,
    ClassLogits,
}

impl ObjectiveInstance {
    fn input(&self, which: ObjectiveInput) -> &Tensor {
        match which {
            ObjectiveInput::Recon => &self.recon,
            ObjectiveInput::Mu => &self.mu,
            ObjectiveInput::Logvar => &self.logvar,
            ObjectiveInput::ClassLogits => &self.class_logits,
        }
    }

    fn loss(&self, g: &mut Graph, which: ObjectiveInput, x: Var) -> Result<Var, HarnessError> {
        let leaf = |g: &mut Graph, w: ObjectiveInput| {
            if std::mem::discriminant(&w) == std::mem::discriminant(&which) {
                x
            } else {
                g.constant(self.input(w).clone())
            }
        };
        let recon_logits = leaf(g, ObjectiveInput::Recon);
        let mu = leaf(g, ObjectiveInput::Mu);
        let logvar = leaf(g, ObjectiveInput::Logvar);
        let logits = leaf(g, ObjectiveInput::ClassLogits);
        let probs = g.softmax(logits)?;
        let fwd = BatchForward {
            input: g.constant(self.target.clone()),
            mu,
            logvar,
            latents: mu,
            recon_logits,
            probs,
        };
        Ok(total_loss(g, &fwd, &self.labels, &self.weights, CLASSES)?.0)
    }
}

/// Tiny random model with a batch, fixed latent noise and fixed projection
/// weights for each head's output.
struct ModelInstance {
    params: ModelParams,
    batch: Vec<SegSequence>,
    noise: Tensor,
    w_mu: Tensor,
    w_logvar: Tensor,
    w_recon: Tensor,
    w_probs: Tensor,
}

fn model_instance(rng: &mut ChaCha8Rng) -> Result<ModelInstance, HarnessError> {
    let dims = FrameDims {
        n_frames: FRAMES,
        height: SIDE,
        width: SIDE,
        n_classes: CLASSES,
    };
    let batch = (0..BATCH)
        .map(|i| {
            let px = (0..FRAMES * SIDE * SIDE)
                .map(|_| rng.random_range(0..CLASSES as u8))
                .collect();
            SegSequence::new(format!("g{i}"), rng.random_bool(0.5), SubjectMeta { contraction: 0.0, noise: 0.0 }, FRAMES, SIDE, SIDE, px)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let config = ModelConfig::new(
        dims,
        ArchConfig {
            latent_dim: 2,
            enc_hidden: 3,
            dec_hidden: 3,
            clf_hidden: 4,
        },
    )?;
    let tensors = ParamId::ALL
        .iter()
        .map(|id| {
            let shape = id.shape(&config);
            normal(rng, &shape, 1.0 / (shape[0] as f64).sqrt())
        })
        .collect();
    let rows = BATCH * FRAMES;
    Ok(ModelInstance {
        params: ModelParams::from_tensors(config, tensors)?,
        batch,
        noise: normal(rng, &[rows, 2], 1.0),
        w_mu: normal(rng, &[rows, 2], 1.0),
        w_logvar: normal(rng, &[rows, 2], 1.0),
        w_recon: normal(rng, &[rows, config.frame_len()], 1.0),
        w_probs: normal(rng, &[BATCH, 2], 1.0),
    })
}

#[derive(Clone, Copy)]
enum Head {
    Encoder,
    Mu,
    Logvar,
    Decoder,
    Classifier,
}

impl Head {
    const ALL: [Head; 5] = [Head::Encoder, Head::Mu, Head::Logvar, Head::Decoder, Head::Classifier];

    fn name(self) -> &'static str {
        match self {
            Head::Encoder => "head/encoder",
            Head::Mu => "head/mu",
            Head::Logvar => "head/logvar",
            Head::Decoder => "head/decoder",
            Head::Classifier => "head/classifier",
        }
    }

    fn params(self) -> &'static [ParamId] {
        use ParamId::*;
        match self {
            Head::Encoder => &[EncW, EncB],
            Head::Mu => &[MuW, MuB],
            Head::Logvar => &[LogvarW, LogvarB],
            Head::Decoder => &[DecW1, DecB1, DecW2, DecB2],
            Head::Classifier => &[ClfW1, ClfB1, ClfW2, ClfB2],
        }
    }
}

impl ModelInstance {
    fn records(&self) -> Vec<&SegSequence> {
        self.batch.iter().collect()
    }

    /// Weighted sum of the outputs of `head`, with `id` bound to `x`.
    fn head_output(&self, g: &mut Graph, head: Head, id: ParamId, x: Var) -> Result<Var, HarnessError> {
        let mut bound = self.params.bind(g, false);
        bound.replace(id, x);
        let fwd = bound.forward_batch(g, &self.records(), LatentMode::Sampled(&self.noise))?;
        match head {
            Head::Encoder | Head::Mu | Head::Logvar => {
                let a = project(g, fwd.mu, &self.w_mu)?;
                let b = project(g, fwd.logvar, &self.w_logvar)?;
                Ok(g.add(a, b)?)
            }
            Head::Decoder => project(g, fwd.recon_logits, &self.w_recon),
            Head::Classifier => project(g, fwd.probs, &self.w_probs),
        }
    }

    /// True when every hidden pre-activation is clear of the ReLU kink.
    fn hidden_clear(&self) -> Result<bool, HarnessError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let pre = |g: &mut Graph, input: Var, w: ParamId, b: ParamId| -> Result<Var, HarnessError> {
            let rows = g.value(input).shape()[0];
            let xw = g.matmul(input, bound.var(w))?;
            let ones = g.constant(Tensor::filled(&[rows, 1], 1.0));
            let bias = g.matmul(ones, bound.var(b))?;
            Ok(g.add(xw, bias)?)
        };
        let c = *self.params.config();
        let x = g.constant(one_hot_batch(&c, &self.records())?);
        let enc = pre(&mut g, x, ParamId::EncW, ParamId::EncB)?;
        let (mu, logvar) = bound.encode(&mut g, x)?;
        let z = reparameterize_graph(&mut g, mu, logvar, &self.noise)?;
        let dec = pre(&mut g, z, ParamId::DecW1, ParamId::DecB1)?;
        let flat = g.reshape(z, &[BATCH, c.n_frames * c.latent_dim])?;
        let clf = pre(&mut g, flat, ParamId::ClfW1, ParamId::ClfB1)?;
        Ok([enc, dec, clf]
            .iter()
            .all(|&v| g.value(v).data().iter().all(|a| a.abs() >= KINK_CLEARANCE)))
    }

    /// The full objective, with `id` bound to `x`.
    #[cfg(test)]
    fn objective(&self, g: &mut Graph, weights: &LossWeights, id: ParamId, x: Var) -> Result<(Var, BatchOutcome), HarnessError> {
        let mut bound = self.params.bind(g, false);
        bound.replace(id, x);
        let records = self.records();
        let labels: Vec<bool> = records.iter().map(|r| r.label).collect();
        let fwd = bound.forward_batch(g, &records, LatentMode::Sampled(&self.noise))?;
        let (l, _, outcome) = total_loss(g, &fwd, &labels, weights, CLASSES)?;
        Ok((l, outcome))
    }
}

fn check(name: &str, x: &Tensor, f: &Builder<'_>) -> Result<GradCheckStats, HarnessError> {
    grad_check_stats(|g, v| f(g, v), x, GRADCHECK_EPS).map_err(|e| match e {
        HarnessError::Autodiff(e) => HarnessError::InvalidInput(format!("{name}: {e}")),
        other => other,
    })
}

fn worse(a: GradCheckStats, b: GradCheckStats) -> GradCheckStats {
    GradCheckStats {
        max_rel_error: a.max_rel_error.max(b.max_rel_error),
        max_rel_error_above_floor: a.max_rel_error_above_floor.max(b.max_rel_error_above_floor),
        rounding_floor: a.rounding_floor.max(b.rounding_floor),
    }
}

fn draw_until<T>(
    seed: u64,
    stream: u64,
    index: usize,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Result<Option<T>, HarnessError>,
) -> Result<T, HarnessError> {
    for attempt in 0..MAX_REJECTIONS as u64 {
        let mut rng = rng_for(seed, &[stream, index as u64, attempt]);
        if let Some(v) = draw(&mut rng)? {
            return Ok(v);
        }
    }
    Err(HarnessError::InvalidInput(
        "could not draw a gradient-check instance clear of kinks".into(),
    ))
}

/// Runs `instances` random instances of every op, every loss term, the full
/// objective with respect to each of its inputs, and every model head with
/// respect to each of its parameter tensors.
pub fn run_gradcheck_suite(instances: usize, seed: u64) -> Result<GradcheckReport, HarnessError> {
    let mut entries = Vec::new();
    for (k, name) in OPS.iter().enumerate() {
        let mut worst = GradCheckStats::default();
        for i in 0..instances {
            let mut rng = rng_for(seed, &[1, k as u64, i as u64]);
            let (x, f) = op_instance(name, &mut rng);
            worst = worse(worst, check(name, &x, &f)?);
        }
        entries.push(GradcheckEntry::new(name, instances, worst));
    }

    let mut loss_worst: Vec<(&'static str, GradCheckStats)> = Vec::new();
    for i in 0..instances {
        let mut rng = rng_for(seed, &[2, i as u64]);
        for (j, (name, x, f)) in loss_checks(&mut rng).into_iter().enumerate() {
            let e = check(name, &x, &f)?;
            match loss_worst.get_mut(j) {
                Some(slot) => slot.1 = worse(slot.1, e),
                None => loss_worst.push((name, e)),
            }
        }
    }

    let inputs = [
        ("total_loss/recon_logits", ObjectiveInput::Recon),
        ("total_loss/mu", ObjectiveInput::Mu),
        ("total_loss/logvar", ObjectiveInput::Logvar),
        ("total_loss/class_logits", ObjectiveInput::ClassLogits),
    ];
    let mut objective_worst = [GradCheckStats::default(); 4];
    for i in 0..instances {
        let inst = draw_until(seed, 3, i, |rng| Ok(objective_instance(rng)))?;
        for (slot, (name, which)) in objective_worst.iter_mut().zip(inputs) {
            let f: Builder<'_> = Box::new(|g, x| inst.loss(g, which, x));
            *slot = worse(*slot, check(name, inst.input(which), &f)?);
        }
    }
    for (name, e) in loss_worst
        .into_iter()
        .chain(inputs.iter().map(|(n, _)| *n).zip(objective_worst))
    {
        entries.push(GradcheckEntry::new(name, instances, e));
    }

    let mut head_worst = [GradCheckStats::default(); 5];
    for i in 0..instances {
        let inst = draw_until(seed, 4, i, |rng| {
            let inst = model_instance(rng)?;
            Ok(inst.hidden_clear()?.then_some(inst))
        })?;
        for (slot, head) in head_worst.iter_mut().zip(Head::ALL) {
            for &id in head.params() {
                let f: Builder<'_> = Box::new(|g, x| inst.head_output(g, head, id, x));
                *slot = worse(*slot, check(head.name(), inst.params.get(id), &f)?);
            }
        }
    }
    entries.extend(
        Head::ALL
            .iter()
            .zip(head_worst)
            .map(|(h, e)| GradcheckEntry::new(h.name(), instances, e)),
    );
    Ok(GradcheckReport { entries })
}
