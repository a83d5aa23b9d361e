//! Reverse-mode gradient tape.
//!
//! A [`Graph`] is an append-only list of nodes; every op evaluates eagerly and
//! records its inputs. Because a node can only reference nodes created before
//! it, walking the list backwards is a reverse topological order.
//!
//! Broadcasting is deliberately absent except for the two named row/column
//! forms ([`Graph::add_row`] for biases and [`Graph::scale_rows`] for per-frame
//! gates). Everything else must agree exactly in shape.

use super::tensor::{gemm, Tensor2};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Lower clamp applied to sigmoid outputs so they never reach exactly zero.
pub const SIGMOID_FLOOR: f64 = f64::MIN_POSITIVE;
/// Largest `f64` strictly below one.
pub const SIGMOID_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;
/// Denominator floor for row normalisation.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogClamped(Var, f64, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<(usize, usize)>),
    L2NormalizeRows(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
}

/// Tape of eagerly evaluated operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints of the leaves of a graph after [`Graph::backward`].
///
/// Interior adjoints are released as soon as they have been propagated.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; exactly zero when `v` did not influence the output.
    pub fn get(&self, v: Var) -> Tensor2 {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor2::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor2 {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor2::zeros(r, c)
            }
        }
    }
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

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives an adjoint (its gradient reads as zero).
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    fn is_constant(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Constant)
    }

    fn push(&mut self, name: &'static str, value: Tensor2, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name.into() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        self.push("matmul_nt", out, Op::MatMulNt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    /// Adds a `1 x C` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::dim("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        let b = bv.data().to_vec();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bb;
            }
        }
        self.push("add_row", out, Op::AddRow(x, bias))
    }

    /// Multiplies row `t` of `x` by `weights[t]`, where `weights` is `T x 1`.
    pub fn scale_rows(&mut self, x: Var, weights: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(weights));
        if wv.cols() != 1 || wv.rows() != xv.rows() {
            return Err(Error::dim("scale_rows", xv.shape(), wv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let w = wv.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|o| *o *= w);
        }
        self.push("scale_rows", out, Op::ScaleRows(x, weights))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.affine(x, factor, 0.0)
    }

    /// `factor * x + offset`, elementwise.
    pub fn affine(&mut self, x: Var, factor: f64, offset: f64) -> Result<Var> {
        let out = self.value(x).map(|v| factor * v + offset);
        self.push("affine", out, Op::Affine(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x))
    }

    /// Logistic function through the stable branch, clamped to
    /// `[SIGMOID_FLOOR, SIGMOID_CEIL]` so outputs stay strictly inside (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(stable_sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push("softmax_rows", out, Op::SoftmaxRows(x))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push("log_softmax_rows", out, Op::LogSoftmaxRows(x))
    }

    /// `ln(clamp(x, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Argument(format!("log clamp range [{lo}, {hi}]")));
        }
        let out = self.value(x).map(|v| v.clamp(lo, hi).ln());
        self.push("log_clamped", out, Op::LogClamped(x, lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyInput("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::dim("concat_cols", self.shape(*first), s));
            }
            cols += s.1;
        }
        let mut out = Tensor2::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyInput("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::dim("concat_rows", self.shape(*first), v.shape()));
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Tensor2::new(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return Err(Error::Index {
                what: "slice_cols".into(),
                index: end,
                len: xv.cols(),
            });
        }
        let mut out = Tensor2::zeros(xv.rows(), end - start);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..end]);
        }
        self.push("slice_cols", out, Op::SliceCols(x, start))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.rows() {
            return Err(Error::Index {
                what: "slice_rows".into(),
                index: end,
                len: xv.rows(),
            });
        }
        let out = Tensor2::new(
            end - start,
            xv.cols(),
            xv.data()[start * xv.cols()..end * xv.cols()].to_vec(),
        )?;
        self.push("slice_rows", out, Op::SliceRows(x, start))
    }

    /// Stacks the listed rows of `x` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * xv.cols());
        for &r in rows {
            if r >= xv.rows() {
                return Err(Error::Index {
                    what: "gather_rows".into(),
                    index: r,
                    len: xv.rows(),
                });
            }
            data.extend_from_slice(xv.row(r));
        }
        let out = Tensor2::new(rows.len(), xv.cols(), data)?;
        self.push("gather_rows", out, Op::GatherRows(x, rows.to_vec()))
    }

    /// Picks individual `(row, col)` entries into an `n x 1` column.
    pub fn pick(&mut self, x: Var, entries: &[(usize, usize)]) -> Result<Var> {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(entries.len());
        for &(r, c) in entries {
            if r >= xv.rows() || c >= xv.cols() {
                return Err(Error::Index {
                    what: "pick".into(),
                    index: r * xv.cols() + c,
                    len: xv.len(),
                });
            }
            data.push(xv.get(r, c));
        }
        let out = Tensor2::column(&data);
        self.push("pick", out, Op::Pick(x, entries.to_vec()))
    }

    /// Divides each row by `max(‖row‖₂, NORM_EPS)`.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|v| *v /= n);
        }
        self.push("l2_normalize_rows", out, Op::L2NormalizeRows(x))
    }

    /// Sum of all entries as a `1x1` node.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor2::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x))
    }

    /// Mean of all entries as a `1x1` node.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::EmptyInput("mean of an empty tensor".into()));
        }
        let out = Tensor2::scalar(xv.sum() / xv.len() as f64);
        self.push("mean", out, Op::Mean(x))
    }

    /// Back-propagates from the `1x1` node `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.shape(output) != (1, 1) {
            return Err(Error::dim("backward", self.shape(output), (1, 1)));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor2::scalar(1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if matches!(node.op, Op::Constant) {
                *slot = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor2, grads: &mut [Option<Tensor2>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if !self.is_constant(*a) {
                    accumulate(grads, *a, gemm(g, false, val(*b), true));
                }
                if !self.is_constant(*b) {
                    accumulate(grads, *b, gemm(val(*a), true, g, false));
                }
            }
            Op::MatMulNt(a, b) => {
                if !self.is_constant(*a) {
                    accumulate(grads, *a, gemm(g, false, val(*b), false));
                }
                if !self.is_constant(*b) {
                    accumulate(grads, *b, gemm(g, true, val(*a), false));
                }
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(val(*b), "mul", |x, y| x * y).expect("shape");
                let gb = g.zip_map(val(*a), "mul", |x, y| x * y).expect("shape");
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::AddRow(x, bias) => {
                let mut gb = Tensor2::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                accumulate(grads, *x, g.clone());
                accumulate(grads, *bias, gb);
            }
            Op::ScaleRows(x, w) => {
                let (xv, wv) = (val(*x), val(*w));
                let mut gx = g.clone();
                let mut gw = Tensor2::zeros(wv.rows(), 1);
                for r in 0..g.rows() {
                    let wr = wv.get(r, 0);
                    gx.row_mut(r).iter_mut().for_each(|v| *v *= wr);
                    let dot: f64 = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                    gw.set(r, 0, dot);
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *w, gw);
            }
            Op::Affine(x, factor) => accumulate(grads, *x, g.map(|v| v * factor)),
            Op::Relu(x) => {
                let gx = g
                    .zip_map(val(*x), "relu", |gv, xv| if xv > 0.0 { gv } else { 0.0 })
                    .expect("shape");
                accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = g
                    .zip_map(&node.value, "sigmoid", |gv, s| gv * s * (1.0 - s))
                    .expect("shape");
                accumulate(grads, *x, gx);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut gx = Tensor2::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::LogSoftmaxRows(x) => {
                let y = &node.value;
                let mut gx = Tensor2::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for ((o, gv), yv) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = gv - yv.exp() * total;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::LogClamped(x, lo, hi) => {
                let gx = g
                    .zip_map(val(*x), "log_clamped", |gv, xv| {
                        if xv >= *lo && xv <= *hi {
                            gv / xv
                        } else {
                            0.0
                        }
                    })
                    .expect("shape");
                accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    let mut gp = Tensor2::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    accumulate(grads, p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    let cols = g.cols();
                    let gp = Tensor2::new(
                        rows,
                        cols,
                        g.data()[offset * cols..(offset + rows) * cols].to_vec(),
                    )
                    .expect("shape");
                    offset += rows;
                    accumulate(grads, p, gp);
                }
            }
            Op::SliceCols(x, start) => {
                let xv = val(*x);
                let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, gx);
            }
            Op::SliceRows(x, start) => {
                let xv = val(*x);
                let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    gx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, gx);
            }
            Op::GatherRows(x, rows) => {
                let xv = val(*x);
                let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                for (i, &r) in rows.iter().enumerate() {
                    for (o, v) in gx.row_mut(r).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Pick(x, entries) => {
                let xv = val(*x);
                let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                for (i, &(r, c)) in entries.iter().enumerate() {
                    let cur = gx.get(r, c);
                    gx.set(r, c, cur + g.get(i, 0));
                }
                accumulate(grads, *x, gx);
            }
            Op::L2NormalizeRows(x) => {
                let xv = val(*x);
                let y = &node.value;
                let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let norm = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let out = gx.row_mut(r);
                    if norm > NORM_EPS {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in out.iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = (gv - yv * dot) / norm;
                        }
                    } else {
                        for (o, gv) in out.iter_mut().zip(g.row(r)) {
                            *o = gv / NORM_EPS;
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                accumulate(grads, *x, Tensor2::filled(r, c, g.item()));
            }
            Op::Mean(x) => {
                let (r, c) = val(*x).shape();
                accumulate(grads, *x, Tensor2::filled(r, c, g.item() / (r * c) as f64));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_FLOOR, SIGMOID_CEIL)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
