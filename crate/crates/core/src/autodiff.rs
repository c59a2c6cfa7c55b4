//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] is an append-only arena of nodes. Every primitive pushes one node whose
//! parents already live on the tape, so node order is a topological order and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Binary elementwise primitives accept equal shapes, or a one-element operand that is
//! broadcast against the other. Anything wider than that is a shape error.
//!
//! A tape is meant to live for one objective evaluation: bind parameters as leaves,
//! build the loss, call `backward`, read leaf gradients, drop the tape.

use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected a {expected} operand, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{op}: index {index} out of range for {len} columns")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Maximum(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Swish(Var),
    Softplus(Var),
    Relu(Var),
    Square(Var),
    Sqrt(Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Sum(Var),
    Mean(Var),
    LogSumExp(Var),
    LogSumExpRows(Var),
    SumRows(Var),
    Broadcast(Var),
    ScaleRows(Var, Var),
    PadOnes(Var),
    PickCols(Var, Vec<usize>),
    StraightThrough(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Maximum(..) => "maximum",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sigmoid(_) => "sigmoid",
            Op::Swish(_) => "swish",
            Op::Softplus(_) => "softplus",
            Op::Relu(_) => "relu",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::LogSumExp(_) => "log_sum_exp",
            Op::LogSumExpRows(_) => "log_sum_exp_rows",
            Op::SumRows(_) => "sum_rows",
            Op::Broadcast(_) => "broadcast",
            Op::ScaleRows(..) => "scale_rows",
            Op::PadOnes(_) => "pad_ones",
            Op::PickCols(..) => "pick_cols",
            Op::StraightThrough(_) => "straight_through",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow for large `x` or cancellation for very negative `x`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_sum_exp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input (data, sampled noise).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of the last `backward` root(s) with respect to `v`.
    /// Nodes never reached hold zeros.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- elementwise binary ------------------------------------------------

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, TapeError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data).expect("same shape")
        } else if vb.is_scalar() {
            let y = vb.data()[0];
            va.map(|x| f(x, y))
        } else if va.is_scalar() {
            let x = va.data()[0];
            vb.map(|y| f(x, y))
        } else {
            return Err(TapeError::ShapeMismatch {
                op: name,
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise maximum; ties route the gradient to the left operand.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary("maximum", a, b, f64::max, Op::Maximum(a, b))
    }

    // ---- elementwise unary -------------------------------------------------

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// `x · sigmoid(x)` (SiLU).
    pub fn swish(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Swish(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    // ---- linear algebra ----------------------------------------------------

    fn expect_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize), TapeError> {
        let s = self.nodes[v.0].value.shape();
        if s.len() != 2 {
            return Err(TapeError::BadRank {
                op,
                expected: "matrix",
                shape: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    /// `a [m×k] · b [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (m, k) = self.expect_matrix("matmul", a)?;
        let (k2, n) = self.expect_matrix("matmul", b)?;
        if k != k2 {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let data = matmul_nn(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, data).expect("matmul shape"), Op::MatMul(a, b), rg))
    }

    /// `a [m×k] · bᵀ` for `b [n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (m, k) = self.expect_matrix("matmul_nt", a)?;
        let (n, k2) = self.expect_matrix("matmul_nt", b)?;
        if k != k2 {
            return Err(TapeError::ShapeMismatch {
                op: "matmul_nt",
                left: vec![m, k],
                right: vec![n, k2],
            });
        }
        let data = matmul_nt(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, data).expect("matmul shape"), Op::MatMulNT(a, b), rg))
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let s = v.sum() / v.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// `log Σ exp(x)` over every element, evaluated after factoring out the maximum.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let s = log_sum_exp_slice(self.nodes[a.0].value.data());
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::LogSumExp(a), rg)
    }

    /// Row-wise `log Σ exp` of a matrix, giving a vector.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var, TapeError> {
        let (r, _) = self.expect_matrix("log_sum_exp_rows", a)?;
        let v = &self.nodes[a.0].value;
        let data = (0..r).map(|i| log_sum_exp_slice(v.row(i))).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::vector(data), Op::LogSumExpRows(a), rg))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TapeError> {
        let (r, _) = self.expect_matrix("sum_rows", a)?;
        let v = &self.nodes[a.0].value;
        let data = (0..r).map(|i| v.row(i).iter().sum()).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::vector(data), Op::SumRows(a), rg))
    }

    // ---- structural --------------------------------------------------------

    /// Repeats a one-element tensor into `shape`.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var, TapeError> {
        let v = &self.nodes[a.0].value;
        if !v.is_scalar() {
            return Err(TapeError::BadRank {
                op: "broadcast",
                expected: "one-element",
                shape: v.shape().to_vec(),
            });
        }
        let value = Tensor::full(shape, v.data()[0]);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Broadcast(a), rg))
    }

    /// Multiplies row `i` of `mat` by `v[i]`. Rows with `v[i] == 0` become exact `+0.0`.
    pub fn scale_rows(&mut self, mat: Var, v: Var) -> Result<Var, TapeError> {
        let (r, c) = self.expect_matrix("scale_rows", mat)?;
        let vs = self.nodes[v.0].value.shape().to_vec();
        if self.nodes[v.0].value.numel() != r || vs.len() > 1 {
            return Err(TapeError::ShapeMismatch {
                op: "scale_rows",
                left: vec![r, c],
                right: vs,
            });
        }
        let m = &self.nodes[mat.0].value;
        let s = self.nodes[v.0].value.data();
        let mut data = m.data().to_vec();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            if s[i] == 0.0 {
                // exact zeros regardless of the row's contents
                row.fill(0.0);
            } else {
                row.iter_mut().for_each(|x| *x *= s[i]);
            }
        }
        let rg = self.rg(mat) || self.rg(v);
        Ok(self.push(Tensor::matrix(r, c, data).expect("shape"), Op::ScaleRows(mat, v), rg))
    }

    /// Prepends a column of ones: `[r×c] -> [r×(c+1)]`.
    pub fn pad_ones(&mut self, a: Var) -> Result<Var, TapeError> {
        let (r, c) = self.expect_matrix("pad_ones", a)?;
        let src = self.nodes[a.0].value.data();
        let mut data = Vec::with_capacity(r * (c + 1));
        for i in 0..r {
            data.push(1.0);
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, c + 1, data).expect("shape"), Op::PadOnes(a), rg))
    }

    /// Picks `a[i, idx[i]]` for every row, giving a vector.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var, TapeError> {
        let (r, c) = self.expect_matrix("pick_cols", a)?;
        if idx.len() != r {
            return Err(TapeError::ShapeMismatch {
                op: "pick_cols",
                left: vec![r, c],
                right: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(TapeError::IndexOutOfRange {
                op: "pick_cols",
                index: bad,
                len: c,
            });
        }
        let v = &self.nodes[a.0].value;
        let data = idx.iter().enumerate().map(|(i, &j)| v.get2(i, j)).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::vector(data), Op::PickCols(a, idx.to_vec()), rg))
    }

    /// Forward value `hard`, backward as the identity into `soft`.
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Result<Var, TapeError> {
        let ss = self.nodes[soft.0].value.shape();
        if hard.shape() != ss {
            return Err(TapeError::ShapeMismatch {
                op: "straight_through",
                left: hard.shape().to_vec(),
                right: ss.to_vec(),
            });
        }
        let rg = self.rg(soft);
        Ok(self.push(hard, Op::StraightThrough(soft), rg))
    }

    // ---- backward ----------------------------------------------------------

    /// Accumulates `∂root/∂node` into every node's gradient.
    pub fn backward(&mut self, root: Var) -> Result<(), TapeError> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(TapeError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut adj);
            }
            match &mut self.grads[i] {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.acc_binary(adj, *a, *b, g, |_, _| 1.0, |_, _| 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_binary(adj, *a, *b, g, |_, _| 1.0, |_, _| -1.0);
            }
            Op::Mul(a, b) => {
                self.acc_binary(adj, *a, *b, g, |_, y| y, |x, _| x);
            }
            Op::Div(a, b) => {
                self.acc_binary(adj, *a, *b, g, |_, y| 1.0 / y, |x, y| -x / (y * y));
            }
            Op::Maximum(a, b) => {
                self.acc_binary(
                    adj,
                    *a,
                    *b,
                    g,
                    |x, y| if x >= y { 1.0 } else { 0.0 },
                    |x, y| if x >= y { 0.0 } else { 1.0 },
                );
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc_unary(adj, *a, g, |_, _| c);
            }
            Op::Offset(a) => self.acc_unary(adj, *a, g, |_, _| 1.0),
            Op::Exp(a) => self.acc_unary_out(adj, *a, g, out, |_, y| y),
            Op::Log(a) => self.acc_unary(adj, *a, g, |x, _| 1.0 / x),
            Op::Sigmoid(a) => self.acc_unary_out(adj, *a, g, out, |_, y| y * (1.0 - y)),
            Op::Swish(a) => self.acc_unary(adj, *a, g, |x, _| {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }),
            Op::Softplus(a) => self.acc_unary(adj, *a, g, |x, _| sigmoid(x)),
            Op::Relu(a) => self.acc_unary(adj, *a, g, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Square(a) => self.acc_unary(adj, *a, g, |x, _| 2.0 * x),
            Op::Sqrt(a) => self.acc_unary_out(adj, *a, g, out, |_, y| 0.5 / y),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.rg(*a) {
                    let d = matmul_nt(g.data(), vb.data(), m, n, k);
                    add_into(adj, *a, Tensor::matrix(m, k, d).expect("shape"));
                }
                if self.rg(*b) {
                    let d = matmul_tn(va.data(), g.data(), m, k, n);
                    add_into(adj, *b, Tensor::matrix(k, n, d).expect("shape"));
                }
            }
            Op::MatMulNT(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[0];
                if self.rg(*a) {
                    let d = matmul_nn(g.data(), vb.data(), m, n, k);
                    add_into(adj, *a, Tensor::matrix(m, k, d).expect("shape"));
                }
                if self.rg(*b) {
                    let d = matmul_tn(g.data(), va.data(), m, n, k);
                    add_into(adj, *b, Tensor::matrix(n, k, d).expect("shape"));
                }
            }
            Op::Sum(a) => {
                let s = g.item();
                add_into(adj, *a, Tensor::full(val(*a).shape(), s));
            }
            Op::Mean(a) => {
                let va = val(*a);
                let s = g.item() / va.numel() as f64;
                add_into(adj, *a, Tensor::full(va.shape(), s));
            }
            Op::LogSumExp(a) => {
                let va = val(*a);
                let (lse, s) = (out.item(), g.item());
                add_into(adj, *a, va.map(|x| s * (x - lse).exp()));
            }
            Op::LogSumExpRows(a) => {
                let va = val(*a);
                let c = va.cols();
                let mut d = va.data().to_vec();
                for (i, chunk) in d.chunks_mut(c).enumerate() {
                    let (lse, gi) = (out.data()[i], g.data()[i]);
                    chunk.iter_mut().for_each(|x| *x = gi * (*x - lse).exp());
                }
                add_into(adj, *a, Tensor::new(va.shape().to_vec(), d).expect("shape"));
            }
            Op::SumRows(a) => {
                let va = val(*a);
                let c = va.cols();
                let d = (0..va.numel()).map(|idx| g.data()[idx / c]).collect();
                add_into(adj, *a, Tensor::new(va.shape().to_vec(), d).expect("shape"));
            }
            Op::Broadcast(a) => {
                let va = val(*a);
                add_into(adj, *a, Tensor::full(va.shape(), g.sum()));
            }
            Op::ScaleRows(m, v) => {
                let (vm, vv) = (val(*m), val(*v));
                let c = vm.cols();
                if self.rg(*m) {
                    let mut d = g.data().to_vec();
                    for (i, chunk) in d.chunks_mut(c).enumerate() {
                        let s = vv.data()[i];
                        chunk.iter_mut().for_each(|x| *x *= s);
                    }
                    add_into(adj, *m, Tensor::new(vm.shape().to_vec(), d).expect("shape"));
                }
                if self.rg(*v) {
                    let d = (0..vm.rows())
                        .map(|i| crate::tensor::dot(&g.data()[i * c..(i + 1) * c], vm.row(i)))
                        .collect::<Vec<_>>();
                    add_into(adj, *v, Tensor::new(vv.shape().to_vec(), d).expect("shape"));
                }
            }
            Op::PadOnes(a) => {
                let va = val(*a);
                let (r, c) = (va.shape()[0], va.shape()[1]);
                let mut d = Vec::with_capacity(r * c);
                for i in 0..r {
                    d.extend_from_slice(&g.data()[i * (c + 1) + 1..(i + 1) * (c + 1)]);
                }
                add_into(adj, *a, Tensor::matrix(r, c, d).expect("shape"));
            }
            Op::PickCols(a, idx) => {
                let va = val(*a);
                let c = va.cols();
                let mut d = vec![0.0; va.numel()];
                for (i, &j) in idx.iter().enumerate() {
                    d[i * c + j] = g.data()[i];
                }
                add_into(adj, *a, Tensor::new(va.shape().to_vec(), d).expect("shape"));
            }
            Op::StraightThrough(soft) => add_into(adj, *soft, g.clone()),
        }
    }

    fn acc_unary(&self, adj: &mut [Option<Tensor>], a: Var, g: &Tensor, d: impl Fn(f64, f64) -> f64) {
        if !self.rg(a) {
            return;
        }
        let va = &self.nodes[a.0].value;
        let data = va.data().iter().zip(g.data()).map(|(&x, &gi)| gi * d(x, 0.0)).collect();
        add_into(adj, a, Tensor::new(va.shape().to_vec(), data).expect("shape"));
    }

    fn acc_unary_out(&self, adj: &mut [Option<Tensor>], a: Var, g: &Tensor, out: &Tensor, d: impl Fn(f64, f64) -> f64) {
        if !self.rg(a) {
            return;
        }
        let va = &self.nodes[a.0].value;
        let data = va
            .data()
            .iter()
            .zip(out.data())
            .zip(g.data())
            .map(|((&x, &y), &gi)| gi * d(x, y))
            .collect();
        add_into(adj, a, Tensor::new(va.shape().to_vec(), data).expect("shape"));
    }

    fn acc_binary(
        &self,
        adj: &mut [Option<Tensor>],
        a: Var,
        b: Var,
        g: &Tensor,
        da: impl Fn(f64, f64) -> f64,
        db: impl Fn(f64, f64) -> f64,
    ) {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let n = g.numel();
        let at = |t: &Tensor, i: usize| if t.numel() == n { t.data()[i] } else { t.data()[0] };
        for (side, target, deriv) in [(0, a, &da as &dyn Fn(f64, f64) -> f64), (1, b, &db)] {
            if !self.rg(target) {
                continue;
            }
            let tv = if side == 0 { va } else { vb };
            let mut d = vec![0.0; tv.numel()];
            let broadcast = tv.numel() != n;
            for i in 0..n {
                let gi = g.data()[i] * deriv(at(va, i), at(vb, i));
                if broadcast {
                    d[0] += gi;
                } else {
                    d[i] = gi;
                }
            }
            add_into(adj, target, Tensor::new(tv.shape().to_vec(), d).expect("shape"));
        }
    }
}

fn add_into(adj: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut adj[v.0] {
        Some(acc) => acc.data_mut().iter_mut().zip(d.data()).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn sigmoid_and_swish_at_zero() {
        let mut t = Tape::new();
        let x = t.scalar(0.0);
        let s = t.sigmoid(x);
        let w = t.swish(x);
        assert_eq!(t.item(s), 0.5);
        assert_eq!(t.item(w), 0.0);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1000.0, 1000.0]));
        let l = t.log_sum_exp(x);
        // 1000 + ln 2, frozen from a 50-digit evaluation.
        assert!(close(t.item(l), 1000.693_147_180_559_9, 1e-15));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let sq = t.square(x);
        let r = t.sum(sq);
        t.backward(r).unwrap();
        assert_eq!(t.grad(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sigmoid_times_constant_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::scalar(0.0));
        let c = t.scalar(4.0);
        let s = t.sigmoid(w);
        let r = t.mul(s, c).unwrap();
        t.backward(r).unwrap();
        assert_eq!(t.grad(w).item(), 1.0);
        // central difference cross-check
        let h = 1e-6;
        let f = |x: f64| 4.0 * sigmoid(x);
        assert!(close((f(h) - f(-h)) / (2.0 * h), 1.0, 1e-9));
    }

    #[test]
    fn fan_out_sums_contributions() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let f = t.add(x, x).unwrap();
        t.backward(f).unwrap();
        assert_eq!(t.grad(x).item(), 2.0);
    }

    #[test]
    fn repeated_backward_accumulates_and_reset_zeroes() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.5, -0.5]));
        let e = t.exp(x);
        let r = t.sum(e);
        t.backward(r).unwrap();
        t.backward(r).unwrap();
        let g = t.grad(x);
        assert!(close(g.data()[0], 2.0 * 1.5f64.exp(), 1e-14));
        t.zero_grad();
        assert!(t.grad(x).data().iter().all(|&v| v == 0.0));
        assert!(t.grad(e).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(TapeError::NonScalarRoot(_))));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        match t.add(a, b) {
            Err(TapeError::ShapeMismatch { op, left, right }) => {
                assert_eq!(op, "add");
                assert_eq!(left, vec![2]);
                assert_eq!(right, vec![3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let m = t.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let n = t.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        assert!(matches!(t.matmul(m, n), Err(TapeError::ShapeMismatch { op: "matmul", .. })));
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(50.0), 50.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!(close(softplus(0.0), std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn straight_through_forwards_hard_and_backpropagates_soft() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.3, -0.2]));
        let s = t.sigmoid(x);
        let st = t.straight_through(Tensor::vector(vec![1.0, 0.0]), s).unwrap();
        assert_eq!(t.value(st).data(), &[1.0, 0.0]);
        let r = t.sum(st);
        t.backward(r).unwrap();
        let g = t.grad(x);
        for (i, &xi) in [0.3f64, -0.2].iter().enumerate() {
            let sg = sigmoid(xi);
            assert!(close(g.data()[i], sg * (1.0 - sg), 1e-15));
        }
    }
}
