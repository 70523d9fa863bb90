//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as it is evaluated; calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! exact gradients for every node that depends on a [`Graph::param`] leaf.
//!
//! Broadcasting is limited to scalar-with-tensor for the elementwise ops.
//! Anything else (for example adding a bias row to every row of a batch)
//! must be spelled out, typically as a product with a column of ones.
//!
//! ```
//! use uaware_core::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: dimensions must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not match {len} data values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("{op}: invalid axis {axis}")]
    InvalidAxis { op: &'static str, axis: usize },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("{op}: input {value} outside the op's domain")]
    Domain { op: &'static str, value: f64 },
    #[error("backward() needs a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("finite-difference step {0} outside (0, 1e-2]")]
    InvalidStep(f64),
}

/// Multiple of `ε · |f| / eps` below which a central difference cannot
/// resolve a gradient component in 64-bit arithmetic.
pub const ROUNDING_FLOOR_FACTOR: f64 = 16.0;

/// Per-component comparison of analytic and central-difference gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckStats {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
    pub max_rel_error: f64,
    /// The same maximum taken only over components whose absolute
    /// discrepancy exceeds `rounding_floor`.
    pub max_rel_error_above_floor: f64,
    /// `ROUNDING_FLOOR_FACTOR · ε · max|f(x ± eps)| / eps`.
    pub rounding_floor: f64,
}

/// Compares the analytic gradient of `f` at `x` against central differences.
///
/// `f` receives a fresh graph and the parameter leaf holding `x`, and must
/// return a scalar node. Returns the largest per-component
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<F, E>(f: F, x: &Tensor, eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Graph, Var) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    Ok(grad_check_stats(f, x, eps)?.max_rel_error)
}

/// [`grad_check`] with the rounding floor of the numeric oracle reported
/// alongside.
pub fn grad_check_stats<F, E>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckStats, E>
where
    F: Fn(&mut Graph, Var) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(AutodiffError::InvalidStep(eps).into());
    }
    let mut g = Graph::new();
    let leaf = g.param(x.clone());
    let out = f(&mut g, leaf)?;
    let analytic = g.backward(out)?.get_or_zeros(leaf, x);

    let eval = |probe: Tensor| -> Result<f64, E> {
        let mut g = Graph::new();
        let leaf = g.param(probe);
        let out = f(&mut g, leaf)?;
        Ok(g.value(out).item())
    };

    let mut diffs = Vec::with_capacity(x.numel());
    let mut f_max: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(probe.clone())?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(probe.clone())?;
        probe.data_mut()[i] = orig;
        f_max = f_max.max(plus.abs()).max(minus.abs());

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        diffs.push(((a - numeric).abs(), (a - numeric).abs() / denom));
    }
    let rounding_floor = ROUNDING_FLOOR_FACTOR * f64::EPSILON * f_max / eps;
    let mut stats = GradCheckStats {
        rounding_floor,
        ..Default::default()
    };
    for (abs, rel) in diffs {
        stats.max_rel_error = stats.max_rel_error.max(rel);
        if abs > rounding_floor {
            stats.max_rel_error_above_floor = stats.max_rel_error_above_floor.max(rel);
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests;
