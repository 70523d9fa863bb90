use super::tensor::{matmul_nn, matmul_nt, matmul_tn};
use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>, usize),
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only computation tape.
///
/// Nodes are pushed in evaluation order, so node indices form a topological
/// order and the graph is acyclic by construction. Only nodes that depend on
/// a [`Graph::param`] leaf track gradients; constants are never
/// differentiated.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, op: Op, x: Var, value: Vec<f64>) -> Var {
        let shape = self.value(x).shape().to_vec();
        let rg = self.requires_grad(x);
        self.push(op, Tensor::from_parts(shape, value), rg)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.value(x).data().iter().map(|&v| f(v)).collect()
    }

    /// Elementwise binary op with scalar broadcast on either side.
    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (shape, data): (Vec<usize>, Vec<f64>) = if ta.shape() == tb.shape() {
            let d = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y));
            (ta.shape().to_vec(), d.collect())
        } else if tb.is_scalar() {
            let s = tb.item();
            (ta.shape().to_vec(), ta.data().iter().map(|&x| f(x, s)).collect())
        } else if ta.is_scalar() {
            let s = ta.item();
            (tb.shape().to_vec(), tb.data().iter().map(|&y| f(s, y)).collect())
        } else {
            return Err(AutodiffError::ShapeMismatch {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(op, Tensor::from_parts(shape, data), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let dims = ta.dims2().zip(tb.dims2());
        let ((n, k), (k2, m)) = match dims {
            Some(d) if d.0 .1 == d.1 .0 => d,
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matmul",
                    lhs: ta.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                })
            }
        };
        debug_assert_eq!(k, k2);
        let out = matmul_nn(ta.data(), tb.data(), n, k, m);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::from_parts(vec![n, m], out), rg))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.map(x, |a| a * c);
        self.unary(Op::Scale(x, c), x, v)
    }

    /// Add a constant to every element.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.map(x, |a| a + c);
        self.unary(Op::AddScalar(x), x, v)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.map(x, |a| if a > 0.0 { a } else { 0.0 });
        self.unary(Op::Relu(x), x, v)
    }

    /// `max(x, 0)`. The subgradient at exactly zero is 0.
    pub fn max0(&mut self, x: Var) -> Var {
        self.relu(x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.map(x, |a| {
            if a >= 0.0 {
                1.0 / (1.0 + (-a).exp())
            } else {
                let e = a.exp();
                e / (1.0 + e)
            }
        });
        self.unary(Op::Sigmoid(x), x, v)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.map(x, f64::exp);
        self.unary(Op::Exp(x), x, v)
    }

    /// Natural log; defined for strictly positive inputs only.
    pub fn log(&mut self, x: Var) -> Result<Var, AutodiffError> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&a| !(a > 0.0)) {
            return Err(AutodiffError::Domain { op: "log", value: bad });
        }
        let v = self.map(x, f64::ln);
        Ok(self.unary(Op::Log(x), x, v))
    }

    /// Clamp into `[lo, hi]`; gradient passes through inside the interval
    /// (bounds inclusive) and is 0 outside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.map(x, |a| a.clamp(lo, hi));
        self.unary(Op::Clamp(x, lo, hi), x, v)
    }

    fn rows_of(&self, x: Var, op: &'static str) -> Result<(usize, usize), AutodiffError> {
        self.value(x).dims2().ok_or_else(|| AutodiffError::RankMismatch {
            op,
            expected: 2,
            shape: self.value(x).shape().to_vec(),
        })
    }

    /// Row-wise softmax of a 2-D tensor, stabilized by row-max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (n, c) = self.rows_of(x, "softmax")?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        debug_assert_eq!(out.len(), n * c);
        Ok(self.unary(Op::Softmax(x), x, out))
    }

    /// Row-wise log-softmax of a 2-D tensor (log-sum-exp stabilized).
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (_, c) = self.rows_of(x, "log_softmax")?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.unary(Op::LogSoftmax(x), x, out))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.requires_grad(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.requires_grad(x);
        self.push(Op::Mean(x), Tensor::scalar(s), rg)
    }

    /// Concatenate 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        if axis > 1 {
            return Err(AutodiffError::InvalidAxis { op: "concat", axis });
        }
        let (rows0, cols0) = self.rows_of(first, "concat")?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.rows_of(p, "concat")?;
            let agrees = if axis == 0 { c == cols0 } else { r == rows0 };
            if !agrees {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            dims.push((r, c));
        }
        let (shape, data) = if axis == 0 {
            let rows = dims.iter().map(|d| d.0).sum();
            let data = parts
                .iter()
                .flat_map(|&p| self.value(p).data().iter().copied())
                .collect();
            (vec![rows, cols0], data)
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(rows0 * cols);
            for i in 0..rows0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(i));
                }
            }
            (vec![rows0, cols], data)
        };
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(
            Op::Concat(parts.to_vec(), axis),
            Tensor::from_parts(shape, data),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(Op::Reshape(x), value, rg))
    }

    /// Reverse-mode accumulation from a scalar root.
    ///
    /// Returns gradients for every node that depends on a parameter leaf and
    /// is reachable from `loss`. Does not mutate the graph, so repeated calls
    /// give bit-identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let root = self.value(loss);
        if !root.is_scalar() {
            return Err(AutodiffError::NonScalarRoot {
                shape: root.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.requires_grad(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.map(|g| Tensor::from_parts(node.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Var, contrib: Vec<f64>) {
        if !self.requires_grad(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contrib) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Gradient for one side of a broadcastable binary op: `local` holds the
    /// per-element partial derivative times upstream gradient, in output shape.
    fn reduce_to(&self, target: Var, local: Vec<f64>) -> Vec<f64> {
        if self.value(target).numel() == local.len() {
            local
        } else {
            vec![local.iter().sum()]
        }
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = self.reduce_to(*a, g.to_vec());
                let gb = self.reduce_to(*b, g.to_vec());
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Sub(a, b) => {
                let ga = self.reduce_to(*a, g.to_vec());
                let gb = self.reduce_to(*b, g.iter().map(|v| -v).collect());
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let at = |t: &Tensor, i: usize| {
                    if t.is_scalar() {
                        t.data()[0]
                    } else {
                        t.data()[i]
                    }
                };
                if self.requires_grad(*a) {
                    let local = g.iter().enumerate().map(|(i, gv)| gv * at(vb, i)).collect();
                    let ga = self.reduce_to(*a, local);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let local = g.iter().enumerate().map(|(i, gv)| gv * at(va, i)).collect();
                    let gb = self.reduce_to(*b, local);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k) = va.dims2().expect("matmul lhs is 2-D");
                let m = vb.dims2().expect("matmul rhs is 2-D").1;
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, matmul_nt(g, vb.data(), n, m, k));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, matmul_tn(va.data(), g, n, k, m));
                }
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, g.iter().map(|v| v * c).collect());
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                self.accumulate(grads, *x, g.to_vec());
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = g
                    .iter()
                    .zip(xv)
                    .map(|(gv, &a)| if a > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g.iter().zip(y).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = g.iter().zip(y).map(|(gv, e)| gv * e).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                let d = g.iter().zip(xv).map(|(gv, a)| gv / a).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                let d = g
                    .iter()
                    .zip(xv)
                    .map(|(gv, a)| if a >= lo && a <= hi { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Softmax(x) => {
                let c = node.value.dims2().expect("softmax is 2-D").1;
                let mut d = Vec::with_capacity(g.len());
                for (g_row, y_row) in g.chunks(c).zip(y.chunks(c)) {
                    let inner: f64 = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                    d.extend(g_row.iter().zip(y_row).map(|(gv, yv)| yv * (gv - inner)));
                }
                self.accumulate(grads, *x, d);
            }
            Op::LogSoftmax(x) => {
                let c = node.value.dims2().expect("log_softmax is 2-D").1;
                let mut d = Vec::with_capacity(g.len());
                for (g_row, y_row) in g.chunks(c).zip(y.chunks(c)) {
                    let total: f64 = g_row.iter().sum();
                    d.extend(g_row.iter().zip(y_row).map(|(gv, lp)| gv - lp.exp() * total));
                }
                self.accumulate(grads, *x, d);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::Concat(parts, axis) => {
                let cols = node.value.dims2().expect("concat is 2-D").1;
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.value(p).dims2().expect("concat part is 2-D");
                    if *axis == 0 {
                        let slice = g[offset * cols..(offset + r) * cols].to_vec();
                        self.accumulate(grads, p, slice);
                        offset += r;
                    } else {
                        let mut slice = Vec::with_capacity(r * c);
                        for i in 0..r {
                            slice.extend_from_slice(&g[i * cols + offset..i * cols + offset + c]);
                        }
                        self.accumulate(grads, p, slice);
                        offset += c;
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`]: one optional gradient per node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or a zero tensor of `like`'s shape when `v` was not
    /// reached from the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}
