//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every op appends one node holding its forward value; `backward` walks the
//! tape in reverse, accumulating gradients into the parameter store. Binary
//! element-wise ops broadcast an operand with a single row and/or column.

use std::sync::Arc;

use crate::diffcore::fft::RealFft;
use crate::diffcore::params::{ParamId, ParamStore, Part};
use crate::diffcore::sparse::SparseMatrix;
use crate::diffcore::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    LogSigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf(Option<(ParamId, Part)>),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    Unary(Unary, Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Column(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    Sum(Var),
    MeanRows(Var),
    SumCols(Var),
    L2NormalizeRows(Var, f64),
    RfftRe(Var, Arc<RealFft>),
    RfftIm(Var, Arc<RealFft>),
    Irfft(Var, Var, Arc<RealFft>),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Recorder for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

#[inline]
fn bidx(t: &Tensor, i: usize, j: usize) -> f64 {
    let r = if t.rows() == 1 { 0 } else { i };
    let c = if t.cols() == 1 { 0 } else { j };
    t.data()[r * t.cols() + c]
}

/// Adds `f(i, j)` over an `rows x cols` grid into `acc`, summing broadcast axes.
fn accumulate_reduced(acc: &mut Tensor, rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) {
    let (ar, ac) = (acc.rows(), acc.cols());
    let data = acc.data_mut();
    for i in 0..rows {
        let r = if ar == 1 { 0 } else { i };
        for j in 0..cols {
            let c = if ac == 1 { 0 } else { j };
            data[r * ac + c] += f(i, j);
        }
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

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, needs_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a value that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf(None), false)
    }

    /// Records a shared constant without copying it.
    pub fn constant_shared(&mut self, value: Arc<Tensor>) -> Var {
        self.push_shared(value, Op::Leaf(None), false)
    }

    /// Leaf reading a real parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let value = store.real(id).clone();
        self.push(value, Op::Leaf(Some((id, Part::Whole))), !p.frozen)
    }

    /// Leaves reading the real and imaginary parts of a complex parameter.
    pub fn complex_param(&mut self, store: &ParamStore, id: ParamId) -> (Var, Var) {
        let frozen = store.get(id).frozen;
        let c = store.complex(id);
        let (re, im) = (c.re(), c.im());
        let re = self.push(re, Op::Leaf(Some((id, Part::Re))), !frozen);
        let im = self.push(im, Op::Leaf(Some((id, Part::Im))), !frozen);
        (re, im)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = crate::diffcore::tensor::matmul(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`; weights stored as `(out, in)` are applied to row-major inputs this way.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = crate::diffcore::tensor::matmul_nt(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMulNt(a, b), ng))
    }

    pub fn spmm(&mut self, m: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let value = m.matmul_dense(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::SpMM(Arc::clone(m), x), ng))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let rows = broadcast_dim(ta.rows(), tb.rows());
        let cols = broadcast_dim(ta.cols(), tb.cols());
        let (Some(rows), Some(cols)) = (rows, cols) else {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        };
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let mut out = Vec::with_capacity(rows * cols);
        if ta.shape() == tb.shape() {
            out.extend(ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)));
        } else {
            for i in 0..rows {
                for j in 0..cols {
                    out.push(f(bidx(ta, i, j), bidx(tb, i, j)));
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(rows, cols, out), Op::Binary(kind, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b, "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::LogSigmoid => log_sigmoid,
        };
        let value = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(value, Op::Unary(kind, a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }

    /// Numerically stable `ln σ(x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::LogSigmoid, a)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = t.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            out.extend(e.iter().map(|v| v / s));
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(r, c, out), Op::SoftmaxRows(a), ng)
    }

    /// `ln Σ_j exp(a_ij)` per row, as an `r x 1` column.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = (0..t.rows())
            .map(|i| {
                let row = t.row(i);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let ng = self.ng(a);
        let r = out.len();
        self.push(Tensor::matrix(r, 1, out), Op::LogSumExpRows(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    self.shape(parts[0]),
                    self.shape(p),
                ));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::matrix(rows, cols, out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    self.shape(parts[0]),
                    self.shape(p),
                ));
            }
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rows = out.len() / cols.max(1);
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::matrix(rows, cols, out),
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    /// Column `j` as an `r x 1` tensor.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let t = self.value(a);
        if j >= t.cols() {
            return Err(Error::shape("column", t.shape(), &[j]));
        }
        let out: Vec<f64> = (0..t.rows()).map(|i| t.get(i, j)).collect();
        let r = out.len();
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(r, 1, out), Op::Column(a, j), ng))
    }

    /// Row lookup (embedding gather); repeated indices accumulate gradient.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape("gather_rows", t.shape(), &[bad]));
        }
        let value = t.gather_rows(&index);
        let ng = self.ng(a);
        Ok(self.push(value, Op::GatherRows(a, index), ng))
    }

    /// Contiguous row range `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.gather_rows(a, Arc::new((start..start + len).collect()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Mean over rows (axis 0), giving a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= r as f64);
        let ng = self.ng(a);
        self.push(Tensor::matrix(1, c, out), Op::MeanRows(a), ng)
    }

    /// Sum along each row (axis 1), giving an `r x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
        let r = out.len();
        let ng = self.ng(a);
        self.push(Tensor::matrix(r, 1, out), Op::SumCols(a), ng)
    }

    /// `x / max(‖x‖₂, eps)` row by row.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = t.row(i);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            out.extend(row.iter().map(|v| v / n));
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(r, c, out), Op::L2NormalizeRows(a, eps), ng)
    }

    /// Real-input DFT of every row; returns `(re, im)`, each `rows x bins`.
    pub fn rfft(&mut self, a: Var, plan: &Arc<RealFft>) -> Result<(Var, Var)> {
        let t = self.value(a);
        if t.cols() != plan.len() {
            return Err(Error::shape("rfft", t.shape(), &[plan.len()]));
        }
        let (r, b) = (t.rows(), plan.bins());
        let mut re = vec![0.0; r * b];
        let mut im = vec![0.0; r * b];
        for i in 0..r {
            plan.forward(
                t.row(i),
                &mut re[i * b..(i + 1) * b],
                &mut im[i * b..(i + 1) * b],
            );
        }
        let ng = self.ng(a);
        let vr = self.push(
            Tensor::matrix(r, b, re),
            Op::RfftRe(a, Arc::clone(plan)),
            ng,
        );
        let vi = self.push(
            Tensor::matrix(r, b, im),
            Op::RfftIm(a, Arc::clone(plan)),
            ng,
        );
        Ok((vr, vi))
    }

    /// Inverse of [`rfft`](Self::rfft) back to real rows of length `plan.len()`.
    pub fn irfft(&mut self, re: Var, im: Var, plan: &Arc<RealFft>) -> Result<Var> {
        let (tr, ti) = (self.value(re), self.value(im));
        if tr.shape() != ti.shape() || tr.cols() != plan.bins() {
            return Err(Error::shape("irfft", tr.shape(), ti.shape()));
        }
        let (r, n) = (tr.rows(), plan.len());
        let mut out = vec![0.0; r * n];
        for i in 0..r {
            plan.inverse(tr.row(i), ti.row(i), &mut out[i * n..(i + 1) * n]);
        }
        let ng = self.ng(re) || self.ng(im);
        Ok(self.push(
            Tensor::matrix(r, n, out),
            Op::Irfft(re, im, Arc::clone(plan)),
            ng,
        ))
    }

    /// Propagates `d loss / d node` back through the tape and adds the
    /// parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if let Op::Leaf(Some((id, part))) = node.op {
                store.accumulate(id, part, &g);
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &*node.value;
        match &node.op {
            Op::Leaf(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.grad_slot(grads, *a) {
                    // dA = G · Bᵀ
                    gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        false,
                        tb.data(),
                        true,
                        ga.data_mut(),
                        1.0,
                    );
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    // dB = Aᵀ · G
                    gemm(
                        k,
                        m,
                        n,
                        ta.data(),
                        true,
                        g.data(),
                        false,
                        gb.data_mut(),
                        1.0,
                    );
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if let Some(ga) = self.grad_slot(grads, *a) {
                    // dA = G · B
                    gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        false,
                        tb.data(),
                        false,
                        ga.data_mut(),
                        1.0,
                    );
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    // dB = Gᵀ · A
                    gemm(
                        n,
                        m,
                        k,
                        g.data(),
                        true,
                        ta.data(),
                        false,
                        gb.data_mut(),
                        1.0,
                    );
                }
            }
            Op::SpMM(m, x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    m.transpose_matmul_acc(g, gx);
                }
            }
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (r, c) = (out.rows(), out.cols());
                let gd = g.data();
                match kind {
                    Binary::Add | Binary::Sub => {
                        if let Some(ga) = self.grad_slot(grads, *a) {
                            accumulate_reduced(ga, r, c, |i, j| gd[i * c + j]);
                        }
                        let sign = if matches!(kind, Binary::Sub) {
                            -1.0
                        } else {
                            1.0
                        };
                        if let Some(gb) = self.grad_slot(grads, *b) {
                            accumulate_reduced(gb, r, c, |i, j| sign * gd[i * c + j]);
                        }
                    }
                    Binary::Mul => {
                        if let Some(ga) = self.grad_slot(grads, *a) {
                            accumulate_reduced(ga, r, c, |i, j| gd[i * c + j] * bidx(tb, i, j));
                        }
                        if let Some(gb) = self.grad_slot(grads, *b) {
                            accumulate_reduced(gb, r, c, |i, j| gd[i * c + j] * bidx(ta, i, j));
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for (d, v) in ga.data_mut().iter_mut().zip(g.data()) {
                        *d += s * v;
                    }
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a);
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let it = ga
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(x.data().iter().zip(out.data()));
                    for ((d, gv), (xv, yv)) in it {
                        let local = match kind {
                            Unary::Sigmoid => yv * (1.0 - yv),
                            Unary::Tanh => 1.0 - yv * yv,
                            Unary::Exp => *yv,
                            Unary::Log => 1.0 / xv,
                            Unary::LogSigmoid => sigmoid(-xv),
                        };
                        *d += gv * local;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for i in 0..out.rows() {
                        let y = out.row(i);
                        let gr = g.row(i);
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, yv), gv) in ga.row_mut(i).iter_mut().zip(y).zip(gr) {
                            *d += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(*a);
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for i in 0..x.rows() {
                        let lse = out.get(i, 0);
                        let gv = g.get(i, 0);
                        for (d, xv) in ga.row_mut(i).iter_mut().zip(x.row(i)) {
                            *d += gv * (xv - lse).exp();
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if let Some(gp) = self.grad_slot(grads, *p) {
                        for i in 0..out.rows() {
                            let src = &g.row(i)[offset..offset + w];
                            for (d, v) in gp.row_mut(i).iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if let Some(gp) = self.grad_slot(grads, *p) {
                        for (d, v) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *d += v;
                        }
                    }
                    offset += n;
                }
            }
            Op::Column(a, j) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let c = ga.cols();
                    for (i, v) in g.data().iter().enumerate() {
                        ga.data_mut()[i * c + j] += v;
                    }
                }
            }
            Op::GatherRows(a, index) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for (k, &src) in index.iter().enumerate() {
                        for (d, v) in ga.row_mut(src).iter_mut().zip(g.row(k)) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.data_mut().iter_mut().for_each(|d| *d += gv);
                }
            }
            Op::MeanRows(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let r = ga.rows() as f64;
                    for i in 0..ga.rows() {
                        for (d, v) in ga.row_mut(i).iter_mut().zip(g.data()) {
                            *d += v / r;
                        }
                    }
                }
            }
            Op::SumCols(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for i in 0..ga.rows() {
                        let gv = g.get(i, 0);
                        ga.row_mut(i).iter_mut().for_each(|d| *d += gv);
                    }
                }
            }
            Op::L2NormalizeRows(a, eps) => {
                let x = self.value(*a);
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for i in 0..x.rows() {
                        let xr = x.row(i);
                        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let gr = g.row(i);
                        if norm > *eps {
                            let y = out.row(i);
                            let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((d, gv), yv) in ga.row_mut(i).iter_mut().zip(gr).zip(y) {
                                *d += (gv - yv * dot) / norm;
                            }
                        } else {
                            for (d, gv) in ga.row_mut(i).iter_mut().zip(gr) {
                                *d += gv / eps;
                            }
                        }
                    }
                }
            }
            Op::RfftRe(a, plan) | Op::RfftIm(a, plan) => {
                let is_re = matches!(node.op, Op::RfftRe(..));
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let b = plan.bins();
                    let zeros = vec![0.0; b];
                    let mut tmp = vec![0.0; plan.len()];
                    for i in 0..g.rows() {
                        let gr = g.row(i);
                        if is_re {
                            plan.forward_adjoint(gr, &zeros, &mut tmp);
                        } else {
                            plan.forward_adjoint(&zeros, gr, &mut tmp);
                        }
                        for (d, v) in ga.row_mut(i).iter_mut().zip(&tmp) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Irfft(re, im, plan) => {
                let b = plan.bins();
                let rows = g.rows();
                let mut gre = vec![0.0; rows * b];
                let mut gim = vec![0.0; rows * b];
                for i in 0..rows {
                    plan.inverse_adjoint(
                        g.row(i),
                        &mut gre[i * b..(i + 1) * b],
                        &mut gim[i * b..(i + 1) * b],
                    );
                }
                if let Some(gr) = self.grad_slot(grads, *re) {
                    for (d, v) in gr.data_mut().iter_mut().zip(&gre) {
                        *d += v;
                    }
                }
                if let Some(gi) = self.grad_slot(grads, *im) {
                    for (d, v) in gi.data_mut().iter_mut().zip(&gim) {
                        *d += v;
                    }
                }
            }
        }
    }
}
