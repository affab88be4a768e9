//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every primitive in execution order. Values are computed
//! eagerly; [`Tape::backward`] replays the record in reverse and returns a
//! [`Gradients`] table. Tapes are cheap and meant to be rebuilt for every
//! optimizer step, so gradients never leak from one step into the next.
//!
//! Besides the usual dense primitives the tape understands a handful of
//! edge-list operations (`gather_rows`, `spmm`, `segment_normalize`, ...)
//! which keep message passing linear in the number of edges.

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Exp,
    Log,
    Sqrt,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Unary, Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    MaskedSoftmaxRows(Var),
    ConcatCols(Var, Var),
    Gather(Var, Arc<[usize]>),
    GatherOr(Var, Arc<[Option<usize>]>),
    ScatterAdd(Var, Arc<[usize]>),
    Spmm {
        weights: Var,
        input: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
    },
    RowDot(Var, Var),
    SegmentNormalize(Var, Arc<[usize]>),
    StraightThrough(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was on a
    /// differentiable path to the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape(m: &Matrix) -> (usize, usize) {
    (m.nrows(), m.ncols())
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
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant leaf; no gradient is tracked for it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(self.value(v))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a 1×1 node.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::dim("matmul", format!("({ar}×{ac}) · ({br}×{bc})")));
        }
        let out = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(
                "elementwise",
                format!("{kind:?} of {sa:?} and {sb:?}"),
            ));
        }
        let (x, y) = (self.value(a), self.value(b));
        let out = match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// `a + row` with a 1×c row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(Error::dim("add_row", format!("{sa:?} + {sr:?}")));
        }
        let out = self.value(a) + self.value(row);
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// `a ⊙ row` with a 1×c row broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(Error::dim("mul_row", format!("{sa:?} ⊙ {sr:?}")));
        }
        let out = self.value(a) * self.value(row);
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::MulRow(a, row), rg))
    }

    /// `a ⊙ col` with an n×1 column broadcast over every column of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(Error::dim("mul_col", format!("{sa:?} ⊙ {sc:?}")));
        }
        let out = self.value(a) * self.value(col);
        let rg = self.rg(&[a, col]);
        Ok(self.push(out, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) + s;
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let x = self.value(a);
        let out = match kind {
            Unary::Sigmoid => x.mapv(sigmoid),
            Unary::Relu => x.mapv(|v| v.max(0.0)),
            Unary::LeakyRelu(slope) => x.mapv(|v| if v > 0.0 { v } else { slope * v }),
            Unary::Exp => x.mapv(f64::exp),
            Unary::Log => x.mapv(f64::ln),
            Unary::Sqrt => x.mapv(f64::sqrt),
            Unary::Neg => x.mapv(|v| -v),
        };
        let rg = self.rg(&[a]);
        self.push(out, Op::Unary(kind, a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    /// Natural log. Callers clamp first; non-positive inputs yield NaN/-inf.
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Unary::Neg, a)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|v| v.clamp(lo, hi));
        let rg = self.rg(&[a]);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.len().max(1) as f64;
        let out = Matrix::from_elem((1, 1), v.sum() / n);
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    /// Per-row sums as an n×1 column.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(&[a]);
        self.push(out, Op::RowSums(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    /// Row softmax restricted to entries where `mask` is nonzero. Masked-out
    /// entries are exactly zero in the output.
    pub fn masked_softmax_rows(&mut self, scores: Var, mask: &Matrix) -> Result<Var> {
        let x = self.value(scores);
        if shape(x) != shape(mask) {
            return Err(Error::dim(
                "masked_softmax_rows",
                format!("scores {:?} vs mask {:?}", shape(x), shape(mask)),
            ));
        }
        let mut out = Matrix::zeros(shape(x));
        for (r, (xr, mr)) in x.rows().into_iter().zip(mask.rows()).enumerate() {
            let m = xr
                .iter()
                .zip(mr.iter())
                .filter(|(_, &k)| k != 0.0)
                .fold(f64::NEG_INFINITY, |m, (&v, _)| m.max(v));
            if m == f64::NEG_INFINITY {
                return Err(Error::DegenerateRow { row: r });
            }
            let mut z = 0.0;
            for c in 0..xr.len() {
                if mr[c] != 0.0 {
                    let e = (xr[c] - m).exp();
                    out[[r, c]] = e;
                    z += e;
                }
            }
            out.row_mut(r).mapv_inplace(|v| v / z);
        }
        let rg = self.rg(&[scores]);
        Ok(self.push(out, Op::MaskedSoftmaxRows(scores), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(Error::dim("concat_cols", format!("{sa:?} ∥ {sb:?}")));
        }
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts checked");
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Output row `k` is row `idx[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.nrows()) {
            return Err(Error::dim(
                "gather_rows",
                format!("index {bad} out of {} rows", x.nrows()),
            ));
        }
        let out = take_rows(x, &idx);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Gather(a, idx), rg))
    }

    /// Like [`Tape::gather_rows`] on a column vector, with `None` entries
    /// filled by the constant `fill`.
    pub fn gather_or(&mut self, a: Var, idx: Arc<[Option<usize>]>, fill: f64) -> Result<Var> {
        let x = self.value(a);
        if x.ncols() != 1 {
            return Err(Error::dim(
                "gather_or",
                format!("expected a column, got {:?}", shape(x)),
            ));
        }
        let mut out = Matrix::zeros((idx.len(), 1));
        for (k, i) in idx.iter().enumerate() {
            out[[k, 0]] = match *i {
                Some(i) if i < x.nrows() => x[[i, 0]],
                Some(i) => {
                    return Err(Error::dim(
                        "gather_or",
                        format!("index {i} out of {} rows", x.nrows()),
                    ))
                }
                None => fill,
            };
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::GatherOr(a, idx), rg))
    }

    /// Adds row `k` of `a` into output row `idx[k]`; the output has `n` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != x.nrows() || idx.iter().any(|&i| i >= n) {
            return Err(Error::dim("scatter_add_rows", "index length or range"));
        }
        let mut out = Matrix::zeros((n, x.ncols()));
        for (k, &i) in idx.iter().enumerate() {
            let mut row = out.row_mut(i);
            row += &x.row(k);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::ScatterAdd(a, idx), rg))
    }

    /// Sparse aggregation: `out[dst[e]] += weights[e] * input[src[e]]`.
    pub fn spmm(
        &mut self,
        weights: Var,
        input: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        n_out: usize,
    ) -> Result<Var> {
        let (w, x) = (self.value(weights), self.value(input));
        if w.ncols() != 1 || w.nrows() != src.len() || src.len() != dst.len() {
            return Err(Error::dim(
                "spmm",
                format!("weights {:?} for {} edges", shape(w), src.len()),
            ));
        }
        if src.iter().any(|&s| s >= x.nrows()) || dst.iter().any(|&d| d >= n_out) {
            return Err(Error::dim("spmm", "edge endpoint out of range"));
        }
        let c = x.ncols();
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let mut out = vec![0.0; n_out * c];
        for e in 0..src.len() {
            let we = w[[e, 0]];
            let (o, i) = (dst[e] * c, src[e] * c);
            for (y, &v) in out[o..o + c].iter_mut().zip(&xs[i..i + c]) {
                *y += we * v;
            }
        }
        let out = Matrix::from_shape_vec((n_out, c), out).expect("shape");
        let rg = self.rg(&[weights, input]);
        Ok(self.push(
            out,
            Op::Spmm {
                weights,
                input,
                src,
                dst,
            },
            rg,
        ))
    }

    /// Row-wise inner products of two same-shape matrices, as a column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim("row_dot", format!("{sa:?} vs {sb:?}")));
        }
        let (x, y) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros((sa.0, 1));
        for (k, (xr, yr)) in x.rows().into_iter().zip(y.rows()).enumerate() {
            out[[k, 0]] = xr.dot(&yr);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::RowDot(a, b), rg))
    }

    /// Divides each entry of a nonnegative column by the sum of its segment,
    /// where `segment[k]` names the group of entry `k`.
    pub fn segment_normalize(&mut self, a: Var, segment: Arc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        if x.ncols() != 1 || x.nrows() != segment.len() {
            return Err(Error::dim("segment_normalize", format!("{:?}", shape(x))));
        }
        let sums = segment_sums(x, &segment);
        let mut out = Matrix::zeros(shape(x));
        for (k, &s) in segment.iter().enumerate() {
            if sums[s] <= 0.0 {
                return Err(Error::DegenerateRow { row: s });
            }
            out[[k, 0]] = x[[k, 0]] / sums[s];
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SegmentNormalize(a, segment), rg))
    }

    /// Forward: threshold at 0.5 to {0, 1}. Backward: identity.
    pub fn straight_through(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(out, Op::StraightThrough(a), rg)
    }

    /// Reverse-mode sweep from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Tape(format!("variable {} is not on this tape", loss.0)))?;
        if shape(&node.value) != (1, 1) {
            return Err(Error::Tape(format!(
                "loss must be 1×1, got {:?}",
                shape(&node.value)
            )));
        }
        if !node.requires_grad {
            return Err(Error::Tape(
                "loss is detached from every trainable parameter".into(),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.dot(&val(*b).t()));
                acc(*b, val(*a).t().dot(g));
            }
            Op::Binary(kind, a, b) => match kind {
                Binary::Add => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Binary::Sub => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Binary::Mul => {
                    acc(*a, g * val(*b));
                    acc(*b, g * val(*a));
                }
                Binary::Div => {
                    let (x, d) = (val(*a), val(*b));
                    acc(*a, g / d);
                    acc(*b, -(g * x) / (d * d));
                }
            },
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulRow(a, row) => {
                acc(*a, g * val(*row));
                acc(*row, (g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulCol(a, col) => {
                acc(*a, g * val(*col));
                acc(*col, (g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Scale(a, s) => acc(*a, g * *s),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Unary(kind, a) => {
                let x = val(*a);
                let mut d = g.clone();
                match kind {
                    Unary::Sigmoid => Zip::from(&mut d)
                        .and(y)
                        .for_each(|d, &y| *d *= y * (1.0 - y)),
                    Unary::Relu => Zip::from(&mut d).and(x).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    }),
                    Unary::LeakyRelu(slope) => Zip::from(&mut d).and(x).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d *= slope
                        }
                    }),
                    Unary::Exp => d *= y,
                    Unary::Log => d /= x,
                    Unary::Sqrt => Zip::from(&mut d).and(y).for_each(|d, &y| *d /= 2.0 * y),
                    Unary::Neg => d.mapv_inplace(|v| -v),
                }
                acc(*a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x < *lo || x > *hi {
                        *d = 0.0
                    }
                });
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Matrix::from_elem(shape(val(*a)), g[[0, 0]])),
            Op::Mean(a) => {
                let x = val(*a);
                acc(
                    *a,
                    Matrix::from_elem(shape(x), g[[0, 0]] / x.len().max(1) as f64),
                );
            }
            Op::RowSums(a) => {
                let x = val(*a);
                let mut d = Matrix::zeros(shape(x));
                for (mut row, &gi) in d.rows_mut().into_iter().zip(g.column(0)) {
                    row.fill(gi);
                }
                acc(*a, d);
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::SoftmaxRows(a) | Op::MaskedSoftmaxRows(a) => {
                let mut d = g * y;
                for (mut dr, yr) in d.rows_mut().into_iter().zip(y.rows()) {
                    let s = dr.sum();
                    Zip::from(&mut dr).and(&yr).for_each(|d, &y| *d -= y * s);
                }
                acc(*a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let mut d = g.clone();
                for ((mut dr, gr), yr) in d.rows_mut().into_iter().zip(g.rows()).zip(y.rows()) {
                    let s = gr.sum();
                    Zip::from(&mut dr)
                        .and(&yr)
                        .for_each(|d, &ly| *d -= ly.exp() * s);
                }
                acc(*a, d);
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).ncols();
                acc(*a, g.slice(ndarray::s![.., ..ca]).to_owned());
                acc(*b, g.slice(ndarray::s![.., ca..]).to_owned());
            }
            Op::Gather(a, idx) => {
                let x = val(*a);
                let mut d = Matrix::zeros(shape(x));
                for (k, &i) in idx.iter().enumerate() {
                    let mut row = d.row_mut(i);
                    row += &g.row(k);
                }
                acc(*a, d);
            }
            Op::GatherOr(a, idx) => {
                let x = val(*a);
                let mut d = Matrix::zeros(shape(x));
                for (k, i) in idx.iter().enumerate() {
                    if let Some(i) = *i {
                        d[[i, 0]] += g[[k, 0]];
                    }
                }
                acc(*a, d);
            }
            Op::ScatterAdd(a, idx) => acc(*a, take_rows(g, idx)),
            Op::Spmm {
                weights,
                input,
                src,
                dst,
            } => {
                let (w, x) = (val(*weights), val(*input));
                let c = x.ncols();
                let gs = g.as_standard_layout();
                let gs = gs.as_slice().expect("standard layout");
                if self.nodes[weights.0].requires_grad {
                    let xs = x.as_standard_layout();
                    let xs = xs.as_slice().expect("standard layout");
                    let mut dw = Matrix::zeros(shape(w));
                    for e in 0..src.len() {
                        let (o, i) = (dst[e] * c, src[e] * c);
                        dw[[e, 0]] = gs[o..o + c]
                            .iter()
                            .zip(&xs[i..i + c])
                            .map(|(a, b)| a * b)
                            .sum();
                    }
                    acc(*weights, dw);
                }
                if self.nodes[input.0].requires_grad {
                    let mut dx = vec![0.0; x.len()];
                    for e in 0..src.len() {
                        let we = w[[e, 0]];
                        let (o, i) = (dst[e] * c, src[e] * c);
                        for (y, &v) in dx[i..i + c].iter_mut().zip(&gs[o..o + c]) {
                            *y += we * v;
                        }
                    }
                    acc(*input, Matrix::from_shape_vec(shape(x), dx).expect("shape"));
                }
            }
            Op::RowDot(a, b) => {
                let (x, z) = (val(*a), val(*b));
                let gcol = g.column(0).insert_axis(Axis(1));
                acc(*a, z * &gcol);
                acc(*b, x * &gcol);
            }
            Op::SegmentNormalize(a, segment) => {
                let x = val(*a);
                let sums = segment_sums(x, segment);
                let mut dots = vec![0.0; sums.len()];
                for (k, &s) in segment.iter().enumerate() {
                    dots[s] += g[[k, 0]] * y[[k, 0]];
                }
                let mut d = Matrix::zeros(shape(x));
                for (k, &s) in segment.iter().enumerate() {
                    d[[k, 0]] = (g[[k, 0]] - dots[s]) / sums[s];
                }
                acc(*a, d);
            }
            Op::StraightThrough(a) => acc(*a, g.clone()),
        }
    }
}

fn segment_sums(x: &Matrix, segment: &[usize]) -> Vec<f64> {
    let n = segment.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; n];
    for (k, &s) in segment.iter().enumerate() {
        sums[s] += x[[k, 0]];
    }
    sums
}

/// Numerically stable row softmax of a plain matrix.
fn take_rows(x: &Matrix, idx: &[usize]) -> Matrix {
    let c = x.ncols();
    let mut out = Matrix::zeros((idx.len(), c));
    for (mut row, &i) in out.rows_mut().into_iter().zip(idx) {
        row.assign(&x.row(i));
    }
    out
}

pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}
