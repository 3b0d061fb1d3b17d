//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends one node holding its forward value. Nodes are only
//! ever appended after their inputs, so the node order is already a
//! topological order and [`Tape::backward`] simply walks it in reverse,
//! accumulating gradients additively.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{AutodiffError, Result};
use crate::tensor::{self, shape_err, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    CausalMask(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize, usize),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    Gather(Var, Vec<usize>),
    LogSigmoid(Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for a single reverse sweep.
///
/// A tape is single-threaded; build separate tapes to run forward passes
/// concurrently.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: [usize; 2]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Adds a leaf that gradients flow into.
    pub fn param(&self, value: Arc<Tensor>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Adds a leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Arc::new(value), Op::Leaf, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Arc::new(value), Op::Leaf, requires_grad)
    }

    pub fn value(&self, var: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[var.0].value)
    }

    pub fn shape(&self, var: Var) -> [usize; 2] {
        self.nodes.borrow()[var.0].value.shape()
    }

    /// Value of a `1 × 1` node.
    pub fn item(&self, var: Var) -> Result<f64> {
        self.nodes.borrow()[var.0].value.item()
    }

    fn push(&self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    fn unary(&self, a: Var, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var> {
        let value = f(&self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(Arc::new(value), op, rg))
    }

    fn binary(&self, a: Var, b: Var, op: Op, f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>) -> Result<Var> {
        let value = f(&self.value(a), &self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Arc::new(value), op, rg))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::MatMul(a, b), |x, y| x.matmul(y))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::MatMulT(a, b), |x, y| x.matmul_t(y))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x.add(y))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x.sub(y))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x.mul(y))
    }

    /// Adds the `1 × n` row `bias` to every row of `a`.
    pub fn add_row(&self, a: Var, bias: Var) -> Result<Var> {
        self.binary(a, bias, Op::AddRow(a, bias), |x, y| x.add_row(y))
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, s), |x| Ok(x.scale(s)))
    }

    pub fn gelu(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Gelu(a), |x| Ok(x.map(tensor::gelu)))
    }

    pub fn softmax(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softmax(a), |x| Ok(tensor::softmax_rows(x)))
    }

    pub fn log_softmax(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::LogSoftmax(a), |x| {
            let mut out = x.clone();
            for r in 0..x.rows() {
                let lse = tensor::log_sum_exp(x.row(r));
                for v in out.row_mut(r) {
                    *v -= lse;
                }
            }
            Ok(out)
        })
    }

    /// Sets entries above the diagonal of a square matrix to `-inf`.
    pub fn causal_mask(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::CausalMask(a), |x| {
            if x.rows() != x.cols() {
                return Err(shape_err("causal_mask", x, x));
            }
            let mut out = x.clone();
            for r in 0..x.rows() {
                for c in r + 1..x.cols() {
                    out.set(r, c, f64::NEG_INFINITY);
                }
            }
            Ok(out)
        })
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × n`).
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        if g.shape() != [1, xv.cols()] {
            return Err(shape_err("layer_norm", &xv, &g));
        }
        if b.shape() != [1, xv.cols()] {
            return Err(shape_err("layer_norm", &xv, &b));
        }
        let (y, xhat, inv_std) = tensor::layer_norm_rows(&xv, g.data(), b.data(), eps);
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Arc::new(y),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Arc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let cols = values.first().map_or(0, |v| v.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for v in &values {
            if v.cols() != cols {
                return Err(shape_err("concat_rows", &values[0], v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(Arc::new(value), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Arc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let rows = values.first().map_or(0, |v| v.rows());
        let cols: usize = values.iter().map(|v| v.cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for v in &values {
            if v.rows() != rows {
                return Err(shape_err("concat_cols", &values[0], v));
            }
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        let rg = self.rg(parts);
        Ok(self.push(Arc::new(out), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.unary(a, Op::SliceRows(a, start), |x| {
            if start > end || end > x.rows() {
                return Err(AutodiffError::Index {
                    op: "slice_rows",
                    index: end,
                    limit: x.rows(),
                });
            }
            Tensor::from_vec(end - start, x.cols(), x.data()[start * x.cols()..end * x.cols()].to_vec())
        })
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.unary(a, Op::SliceCols(a, start, end), |x| {
            if start > end || end > x.cols() {
                return Err(AutodiffError::Index {
                    op: "slice_cols",
                    index: end,
                    limit: x.cols(),
                });
            }
            let mut data = Vec::with_capacity(x.rows() * (end - start));
            for r in 0..x.rows() {
                data.extend_from_slice(&x.row(r)[start..end]);
            }
            Tensor::from_vec(x.rows(), end - start, data)
        })
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sum(a), |x| Ok(Tensor::scalar(x.sum())))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Mean(a), |x| {
            if x.is_empty() {
                return Err(AutodiffError::Invalid {
                    op: "mean",
                    reason: "empty tensor".into(),
                });
            }
            Ok(Tensor::scalar(x.sum() / x.len() as f64))
        })
    }

    /// Mean over rows of `-log softmax(logits)[row, label]`.
    pub fn cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        if labels.len() != x.rows() || labels.is_empty() {
            return Err(AutodiffError::Invalid {
                op: "cross_entropy",
                reason: format!("{} labels for {} rows", labels.len(), x.rows()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= x.cols()) {
            return Err(AutodiffError::Index {
                op: "cross_entropy",
                index: bad,
                limit: x.cols(),
            });
        }
        let probs = tensor::softmax_rows(&x);
        let mut total = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            total += tensor::log_sum_exp(x.row(r)) - x.get(r, l);
        }
        let value = Tensor::scalar(total / labels.len() as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Arc::new(value),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Picks `a[r, index[r]]` for every row, giving an `n × 1` column.
    pub fn gather(&self, a: Var, index: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if index.len() != x.rows() {
            return Err(AutodiffError::Invalid {
                op: "gather",
                reason: format!("{} indices for {} rows", index.len(), x.rows()),
            });
        }
        let mut data = Vec::with_capacity(index.len());
        for (r, &c) in index.iter().enumerate() {
            if c >= x.cols() {
                return Err(AutodiffError::Index {
                    op: "gather",
                    index: c,
                    limit: x.cols(),
                });
            }
            data.push(x.get(r, c));
        }
        let value = Tensor::from_vec(index.len(), 1, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Arc::new(value), Op::Gather(a, index.to_vec()), rg))
    }

    pub fn log_sigmoid(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::LogSigmoid(a), |x| Ok(x.map(tensor::log_sigmoid)))
    }

    /// Reverse sweep from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        root.value.item()?;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let val = |v: Var| -> &Tensor { &nodes[v.0].value };
            let mut send = |v: Var, t: Tensor| -> Result<()> {
                if !nodes[v.0].requires_grad {
                    return Ok(());
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => {
                        *slot = Some(t);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if nodes[a.0].requires_grad {
                        send(*a, g.matmul_t(val(*b))?)?;
                    }
                    if nodes[b.0].requires_grad {
                        send(*b, val(*a).t_matmul(&g)?)?;
                    }
                }
                Op::MatMulT(a, b) => {
                    if nodes[a.0].requires_grad {
                        send(*a, g.matmul(val(*b))?)?;
                    }
                    if nodes[b.0].requires_grad {
                        send(*b, g.t_matmul(val(*a))?)?;
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone())?;
                    send(*b, g)?;
                }
                Op::Sub(a, b) => {
                    send(*b, g.scale(-1.0))?;
                    send(*a, g)?;
                }
                Op::Mul(a, b) => {
                    send(*a, g.mul(val(*b))?)?;
                    send(*b, g.mul(val(*a))?)?;
                }
                Op::AddRow(a, b) => {
                    send(*b, g.sum_rows())?;
                    send(*a, g)?;
                }
                Op::Scale(a, s) => send(*a, g.scale(*s))?,
                Op::Gelu(a) => {
                    let x = val(*a);
                    let mut out = g;
                    for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
                        *o *= tensor::gelu_grad(xv);
                    }
                    send(*a, out)?;
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut out = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s = tensor::dot(yr, gr);
                        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (gr[c] - s);
                        }
                    }
                    send(*a, out)?;
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut out = g.clone();
                    for r in 0..y.rows() {
                        let s: f64 = g.row(r).iter().sum();
                        for (o, &ly) in out.row_mut(r).iter_mut().zip(y.row(r)) {
                            *o -= ly.exp() * s;
                        }
                    }
                    send(*a, out)?;
                }
                Op::CausalMask(a) => {
                    let mut out = g;
                    let n = out.rows();
                    for r in 0..n {
                        for c in r + 1..n {
                            out.set(r, c, 0.0);
                        }
                    }
                    send(*a, out)?;
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gam = val(*gamma);
                    let n = xhat.cols();
                    if nodes[gamma.0].requires_grad {
                        send(*gamma, g.mul(xhat)?.sum_rows())?;
                    }
                    if nodes[beta.0].requires_grad {
                        send(*beta, g.sum_rows())?;
                    }
                    if nodes[x.0].requires_grad {
                        let mut dx = Tensor::zeros(xhat.rows(), n);
                        for r in 0..xhat.rows() {
                            let gr = g.row(r);
                            let xr = xhat.row(r);
                            let dxhat: Vec<f64> = (0..n).map(|c| gr[c] * gam.data()[c]).collect();
                            let s1: f64 = dxhat.iter().sum();
                            let s2: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                            let k = inv_std[r] / n as f64;
                            for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                                *o = k * (n as f64 * dxhat[c] - s1 - xr[c] * s2);
                            }
                        }
                        send(*x, dx)?;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let [r, c] = val(*p).shape();
                        if nodes[p.0].requires_grad {
                            let piece = Tensor::from_vec(r, c, g.data()[offset * c..(offset + r) * c].to_vec())?;
                            send(*p, piece)?;
                        }
                        offset += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let [r, c] = val(*p).shape();
                        if nodes[p.0].requires_grad {
                            let mut piece = Tensor::zeros(r, c);
                            for row in 0..r {
                                piece.row_mut(row).copy_from_slice(&g.row(row)[offset..offset + c]);
                            }
                            send(*p, piece)?;
                        }
                        offset += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let [r, c] = val(*a).shape();
                    let mut out = Tensor::zeros(r, c);
                    for row in 0..g.rows() {
                        out.row_mut(start + row).copy_from_slice(g.row(row));
                    }
                    send(*a, out)?;
                }
                Op::SliceCols(a, start, end) => {
                    let [r, c] = val(*a).shape();
                    let mut out = Tensor::zeros(r, c);
                    for row in 0..r {
                        out.row_mut(row)[*start..*end].copy_from_slice(g.row(row));
                    }
                    send(*a, out)?;
                }
                Op::Sum(a) => {
                    let [r, c] = val(*a).shape();
                    send(*a, Tensor::filled(r, c, g.item()?))?;
                }
                Op::Mean(a) => {
                    let [r, c] = val(*a).shape();
                    send(*a, Tensor::filled(r, c, g.item()? / (r * c) as f64))?;
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let scale = g.item()? / labels.len() as f64;
                    let mut out = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        let v = out.get(r, l);
                        out.set(r, l, v - 1.0);
                    }
                    out.scale_assign(scale);
                    send(*logits, out)?;
                }
                Op::Gather(a, index) => {
                    let [r, c] = val(*a).shape();
                    let mut out = Tensor::zeros(r, c);
                    for (row, &col) in index.iter().enumerate() {
                        out.set(row, col, g.get(row, 0));
                    }
                    send(*a, out)?;
                }
                Op::LogSigmoid(a) => {
                    let x = val(*a);
                    let mut out = g;
                    for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
                        *o *= tensor::sigmoid(-xv);
                    }
                    send(*a, out)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}
