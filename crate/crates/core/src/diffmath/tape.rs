//! Define-by-run reverse-mode differentiation over small dense 2-D tensors.
//!
//! A [`Tape`] records every primitive as it executes. Operations take and
//! return [`Var`] handles; values live on the tape. Calling
//! [`Tape::backward`] on a scalar walks the record once in reverse and adds
//! `∂root/∂leaf` into the gradient slot of every parameter leaf.
//!
//! Binary elementwise ops broadcast along any axis of extent one, which is
//! all the models need (row vectors for biases, column vectors for per-node
//! scalars, 1×1 scalars).
//!
//! ```
//! use lopgpn::diffmath::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::row(vec![1.0, -2.0, 3.0]));
//! let y = tape.sum(tape.mul(x, x).unwrap());
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

use std::cell::RefCell;
use std::rc::Rc;

use super::special::{digamma_pos, ln_gamma_pos, trigamma_pos};
use crate::error::{Error, Result};
use crate::sparse::{DenseMatrix, SparseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "tensor {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::full(1, 1, v)
    }

    pub fn row(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn column(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_vec(self.rows, self.cols, self.data.clone()).expect("consistent shape")
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl From<&DenseMatrix> for Tensor {
    fn from(m: &DenseMatrix) -> Self {
        Tensor {
            rows: m.n_rows(),
            cols: m.n_cols(),
            data: m.values().to_vec(),
        }
    }
}

/// A constant sparse operator usable as the left factor of [`Tape::spmm`].
/// Keeps its transpose for the backward pass.
#[derive(Debug)]
pub struct SparseOperator {
    forward: SparseMatrix,
    transposed: SparseMatrix,
}

impl SparseOperator {
    pub fn new(m: SparseMatrix) -> Rc<Self> {
        let transposed = m.transpose();
        Rc::new(Self {
            forward: m,
            transposed,
        })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.forward
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Sqrt(Var),
    Lgamma(Var),
    Digamma(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    IndexSelect(Var, Rc<[usize]>),
    ConcatCols(Vec<Var>),
    SpMM(Rc<SparseOperator>, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[cfg(test)]
thread_local! {
    /// Offset added to every digamma partial; lets tests confirm the gradient
    /// checker notices a wrong derivative.
    pub(crate) static DIGAMMA_GRAD_PERTURBATION: std::cell::Cell<f64> = const { std::cell::Cell::new(0.0) };
}

fn digamma_partial(x: f64) -> f64 {
    #[cfg(test)]
    {
        trigamma_pos(x) + DIGAMMA_GRAD_PERTURBATION.with(|p| p.get())
    }
    #[cfg(not(test))]
    {
        trigamma_pos(x)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::ShapeMismatch { op, left: a, right: b }),
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, shape: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (rows, cols) = shape;
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let ia = if a.rows == 1 { 0 } else { i };
        let ib = if b.rows == 1 { 0 } else { i };
        for j in 0..cols {
            let ja = if a.cols == 1 { 0 } else { j };
            let jb = if b.cols == 1 { 0 } else { j };
            data.push(f(a.data[ia * a.cols + ja], b.data[ib * b.cols + jb]));
        }
    }
    Tensor { rows, cols, data }
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        return g;
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for i in 0..g.rows {
        let io = if shape.0 == 1 { 0 } else { i };
        for j in 0..g.cols {
            let jo = if shape.1 == 1 { 0 } else { j };
            out.data[io * shape.1 + jo] += g.data[i * g.cols + j];
        }
    }
    out
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        let dst = &mut out.data[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (d, &bv) in dst.iter_mut().zip(&b.data[p * m..(p + 1) * m]) {
                *d += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.cols, a.rows);
    for i in 0..a.rows {
        for j in 0..a.cols {
            out.data[j * a.rows + i] = a.data[i * a.cols + j];
        }
    }
    out
}

fn sparse_apply(m: &SparseMatrix, x: &Tensor) -> Tensor {
    let k = x.cols;
    let mut out = Tensor::zeros(m.n_rows(), k);
    for i in 0..m.n_rows() {
        let (cols, vals) = m.row(i);
        let dst = &mut out.data[i * k..(i + 1) * k];
        for (&j, &v) in cols.iter().zip(vals) {
            for (d, s) in dst.iter_mut().zip(&x.data[j * k..(j + 1) * k]) {
                *d += v * s;
            }
        }
    }
    out
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.data[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.nodes.borrow()[v.0].grad.clone()
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.with_value(a, |t| t.map(f));
        let rg = self.needs_grad(&[a]);
        self.push(value, op, rg)
    }

    fn binary(&self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let shape = broadcast_shape(name, x.shape(), y.shape())?;
            zip_broadcast(x, y, shape, f)
        };
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    fn check_domain(&self, a: Var, op: &'static str, ok: impl Fn(f64) -> bool) -> Result<()> {
        self.with_value(a, |t| match t.data.iter().find(|&&x| !ok(x)) {
            Some(&value) => Err(Error::Domain { op, value }),
            None => Ok(()),
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.cols != y.rows {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    left: x.shape(),
                    right: y.shape(),
                });
            }
            matmul(x, y)
        };
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        self.check_domain(a, "log", |x| x > 0.0)?;
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        self.check_domain(a, "sqrt", |x| x > 0.0)?;
        Ok(self.unary(a, Op::Sqrt(a), f64::sqrt))
    }

    pub fn lgamma(&self, a: Var) -> Result<Var> {
        self.check_domain(a, "lgamma", |x| x > 0.0 && x.is_finite())?;
        Ok(self.unary(a, Op::Lgamma(a), ln_gamma_pos))
    }

    pub fn digamma(&self, a: Var) -> Result<Var> {
        self.check_domain(a, "digamma", |x| x > 0.0 && x.is_finite())?;
        Ok(self.unary(a, Op::Digamma(a), digamma_pos))
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&self, a: Var) -> Var {
        let v = self.with_value(a, |t| t.data.iter().sum());
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(v), Op::Sum(a), rg)
    }

    pub fn mean(&self, a: Var) -> Var {
        let v = self.with_value(a, |t| t.data.iter().sum::<f64>() / t.len() as f64);
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(v), Op::Mean(a), rg)
    }

    /// Sums each row: `(r, c) -> (r, 1)`.
    pub fn sum_rows(&self, a: Var) -> Var {
        let value = self.with_value(a, |t| {
            Tensor::column(
                (0..t.rows)
                    .map(|i| t.data[i * t.cols..(i + 1) * t.cols].iter().sum())
                    .collect(),
            )
        });
        let rg = self.needs_grad(&[a]);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Sums each column: `(r, c) -> (1, c)`.
    pub fn sum_cols(&self, a: Var) -> Var {
        let value = self.with_value(a, |t| {
            let mut out = vec![0.0; t.cols];
            for i in 0..t.rows {
                for (o, v) in out.iter_mut().zip(&t.data[i * t.cols..(i + 1) * t.cols]) {
                    *o += v;
                }
            }
            Tensor::row(out)
        });
        let rg = self.needs_grad(&[a]);
        self.push(value, Op::SumCols(a), rg)
    }

    /// Gathers rows by index (repeats allowed).
    pub fn index_select(&self, a: Var, rows: &[usize]) -> Result<Var> {
        let value = self.with_value(a, |t| {
            if let Some(&r) = rows.iter().find(|&&r| r >= t.rows) {
                return Err(Error::invalid(format!("row index {r} out of range for {} rows", t.rows)));
            }
            let mut data = Vec::with_capacity(rows.len() * t.cols);
            for &r in rows {
                data.extend_from_slice(&t.data[r * t.cols..(r + 1) * t.cols]);
            }
            Ok(Tensor {
                rows: rows.len(),
                cols: t.cols,
                data,
            })
        })?;
        let rg = self.needs_grad(&[a]);
        Ok(self.push(value, Op::IndexSelect(a, rows.into()), rg))
    }

    /// Concatenates along columns; all parts must share the row count.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
            let rows = nodes[first.0].value.rows;
            for p in parts {
                let t = &nodes[p.0].value;
                if t.rows != rows {
                    return Err(Error::ShapeMismatch {
                        op: "concat_cols",
                        left: nodes[first.0].value.shape(),
                        right: t.shape(),
                    });
                }
            }
            let cols: usize = parts.iter().map(|p| nodes[p.0].value.cols).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for p in parts {
                    let t = &nodes[p.0].value;
                    data.extend_from_slice(&t.data[i * t.cols..(i + 1) * t.cols]);
                }
            }
            Tensor { rows, cols, data }
        };
        let rg = self.needs_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// `m · a` for a constant sparse `m`.
    pub fn spmm(&self, m: &Rc<SparseOperator>, a: Var) -> Result<Var> {
        let value = self.with_value(a, |t| {
            if m.forward.n_cols() != t.rows {
                return Err(Error::ShapeMismatch {
                    op: "spmm",
                    left: (m.forward.n_rows(), m.forward.n_cols()),
                    right: t.shape(),
                });
            }
            Ok(sparse_apply(&m.forward, t))
        })?;
        let rg = self.needs_grad(&[a]);
        Ok(self.push(value, Op::SpMM(Rc::clone(m), a), rg))
    }

    /// Row-wise softmax. The row maximum is subtracted as a constant, which
    /// leaves both value and gradient unchanged.
    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        let shifted = {
            let maxes = self.with_value(a, |t| {
                Tensor::column(
                    (0..t.rows)
                        .map(|i| t.data[i * t.cols..(i + 1) * t.cols].iter().copied().fold(f64::NEG_INFINITY, f64::max))
                        .collect(),
                )
            });
            let m = self.constant(maxes);
            self.sub(a, m)?
        };
        let e = self.exp(shifted);
        let s = self.sum_rows(e);
        self.div(e, s)
    }

    /// Back-propagates from the scalar `root`, adding into every parameter's
    /// gradient. Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&self, root: Var) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let shape = nodes[root.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut leaf_grads: Vec<(usize, Tensor)> = Vec::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut send = |v: Var, t: Tensor| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::Add(a, b) => {
                    send(*a, reduce_to(g.clone(), val(*a).shape()));
                    send(*b, reduce_to(g, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    send(*a, reduce_to(g.clone(), val(*a).shape()));
                    send(*b, reduce_to(g.map(|x| -x), val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let ga = zip_broadcast(&g, y, g.shape(), |g, y| g * y);
                    let gb = zip_broadcast(&g, x, g.shape(), |g, x| g * x);
                    send(*a, reduce_to(ga, x.shape()));
                    send(*b, reduce_to(gb, y.shape()));
                }
                Op::Div(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let ga = zip_broadcast(&g, y, g.shape(), |g, y| g / y);
                    let q = &node.value;
                    let gq = zip_broadcast(&g, q, g.shape(), |g, q| g * q);
                    let gb = zip_broadcast(&gq, y, g.shape(), |gq, y| -gq / y);
                    send(*a, reduce_to(ga, x.shape()));
                    send(*b, reduce_to(gb, y.shape()));
                }
                Op::Neg(a) => send(*a, g.map(|x| -x)),
                Op::Scale(a, c) => {
                    let c = *c;
                    send(*a, g.map(|x| c * x));
                }
                Op::AddScalar(a) => send(*a, g),
                Op::MatMul(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    send(*a, matmul(&g, &transpose(y)));
                    send(*b, matmul(&transpose(x), &g));
                }
                Op::Exp(a) => send(*a, zip_broadcast(&g, &node.value, g.shape(), |g, y| g * y)),
                Op::Log(a) => send(*a, zip_broadcast(&g, val(*a), g.shape(), |g, x| g / x)),
                Op::Tanh(a) => send(*a, zip_broadcast(&g, &node.value, g.shape(), |g, y| g * (1.0 - y * y))),
                Op::Relu(a) => send(*a, zip_broadcast(&g, val(*a), g.shape(), |g, x| if x > 0.0 { g } else { 0.0 })),
                Op::Softplus(a) => send(*a, zip_broadcast(&g, val(*a), g.shape(), |g, x| g * sigmoid(x))),
                Op::Sqrt(a) => send(*a, zip_broadcast(&g, &node.value, g.shape(), |g, y| 0.5 * g / y)),
                Op::Lgamma(a) => send(*a, zip_broadcast(&g, val(*a), g.shape(), |g, x| g * digamma_pos(x))),
                Op::Digamma(a) => send(*a, zip_broadcast(&g, val(*a), g.shape(), |g, x| g * digamma_partial(x))),
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    send(
                        *a,
                        zip_broadcast(&g, val(*a), g.shape(), |g, x| if x >= lo && x <= hi { g } else { 0.0 }),
                    )
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    send(*a, Tensor::full(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = val(*a).shape();
                    send(*a, Tensor::full(r, c, g.item() / (r * c) as f64));
                }
                Op::SumRows(a) => {
                    let shape = val(*a).shape();
                    send(*a, zip_broadcast(&g, &Tensor::full(1, shape.1, 1.0), shape, |g, _| g));
                }
                Op::SumCols(a) => {
                    let shape = val(*a).shape();
                    send(*a, zip_broadcast(&g, &Tensor::full(shape.0, 1, 1.0), shape, |g, _| g));
                }
                Op::IndexSelect(a, rows) => {
                    let (r, c) = val(*a).shape();
                    let mut out = Tensor::zeros(r, c);
                    for (k, &row) in rows.iter().enumerate() {
                        for j in 0..c {
                            out.data[row * c + j] += g.data[k * c + j];
                        }
                    }
                    send(*a, out);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (r, c) = val(*p).shape();
                        let mut out = Tensor::zeros(r, c);
                        for i in 0..r {
                            out.data[i * c..(i + 1) * c]
                                .copy_from_slice(&g.data[i * g.cols + offset..i * g.cols + offset + c]);
                        }
                        offset += c;
                        send(*p, out);
                    }
                }
                Op::SpMM(m, a) => send(*a, sparse_apply(&m.transposed, &g)),
            }
        }

        for (i, g) in leaf_grads {
            match &mut nodes[i].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::gradcheck::{check_primitives, check_unary_scalar_fn};

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.param(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = tape.sum(x);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_is_twice_x() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(vec![0.5, -1.5, 2.0]));
        let y = tape.sum(tape.mul(x, x).unwrap());
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, -3.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(vec![1.0, 2.0]));
        let y = tape.sum(tape.mul(x, x).unwrap());
        tape.backward(y).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot((1, 2)))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let c = tape.constant(Tensor::scalar(2.0));
        let y = tape.mul(x, c).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 2.0);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn shape_and_domain_errors() {
        let tape = Tape::new();
        let a = tape.param(Tensor::zeros(2, 3));
        let b = tape.param(Tensor::zeros(3, 2));
        assert!(tape.add(a, b).is_err());
        assert!(tape.matmul(a, a).is_err());
        assert!(tape.log(a).is_err());
        assert!(tape.digamma(a).is_err());
        assert!(tape.lgamma(a).is_err());
        assert!(tape.index_select(a, &[5]).is_err());
        assert!(tape.concat_cols(&[a, b]).is_err());
    }

    #[test]
    fn digamma_forward_value() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1.0));
        let y = tape.digamma(x).unwrap();
        assert!((tape.scalar_value(y) + 0.577_215_664_901_532_9).abs() < 1e-14);
        let l = tape.lgamma(tape.constant(Tensor::row(vec![1.0, 5.0]))).unwrap();
        let v = tape.value(l);
        assert!(v.data()[0].abs() < 1e-14);
        assert!((v.data()[1] - 24f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn digamma_derivative_matches_finite_difference() {
        let err = check_unary_scalar_fn(|t, x| t.digamma(x).unwrap(), 2.0, 1e-5);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn broadcasting_gradients_reduce() {
        let tape = Tape::new();
        let m = tape.param(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let r = tape.param(Tensor::row(vec![1.0, 10.0, 100.0]));
        let c = tape.param(Tensor::column(vec![2.0, 3.0]));
        let y = tape.mul(tape.add(m, r).unwrap(), c).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(r).unwrap().data(), &[5.0, 5.0, 5.0]);
        assert_eq!(tape.grad(c).unwrap().data(), &[1.0 + 10.0 + 100.0 + 6.0, 4.0 + 5.0 + 6.0 + 111.0]);
        assert_eq!(tape.grad(m).unwrap().data(), &[2.0, 2.0, 2.0, 3.0, 3.0, 3.0]);
    }

    /// Chain rule on a 3-node graph, checked against hand-derived partials:
    /// f(x) = Σ_i softplus((P x)_i)² with a fixed 3×3 sparse P.
    #[test]
    fn composed_graph_matches_symbolic_chain_rule() {
        let p = SparseMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 0, 0.5), (1, 2, 0.5), (2, 1, 1.0)]).unwrap();
        let x = [0.3, -1.2, 2.0];
        let tape = Tape::new();
        let xv = tape.param(Tensor::column(x.to_vec()));
        let op = SparseOperator::new(p.clone());
        let px = tape.spmm(&op, xv).unwrap();
        let sp = tape.softplus(px);
        let f = tape.sum(tape.mul(sp, sp).unwrap());
        tape.backward(f).unwrap();
        let got = tape.grad(xv).unwrap();

        let dense = p.to_dense();
        let px: Vec<f64> = (0..3).map(|i| (0..3).map(|j| dense.get(i, j) * x[j]).sum()).collect();
        // ∂f/∂x_j = Σ_i 2 softplus(px_i) σ(px_i) P_ij
        for j in 0..3 {
            let want: f64 = (0..3)
                .map(|i| 2.0 * softplus(px[i]) * sigmoid(px[i]) * dense.get(i, j))
                .sum();
            assert!((got.data()[j] - want).abs() < 1e-14);
        }
    }

    /// Every primitive, 100 random points each, central differences with h = 1e-5.
    #[test]
    fn primitives_pass_randomized_gradient_check() {
        for (name, err) in check_primitives(100, 2024) {
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }
}
