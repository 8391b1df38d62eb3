//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its value and the indices of its operands. [`Tape::backward`] walks the
//! nodes in reverse insertion order (which is a valid reverse topological
//! order) and accumulates adjoints for every node that depends on a
//! gradient-tracking leaf.
//!
//! The operation set is exactly what the recommender needs: products,
//! elementwise arithmetic, row softmax and its per-neighborhood variant,
//! logistic functions, reductions, concatenation, and row gather/scatter.
//!
//! ```
//! use streamprompt::numeric::{DenseMatrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(DenseMatrix::row_vector(&[1.0, -2.0, 3.0]).unwrap(), true);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().as_slice(), &[2.0, -4.0, 6.0]);
//! ```

use std::sync::Arc;

use super::matrix::{dot, matmul, softmax_in_place, softmax_rows, CsrMatrix, DenseMatrix};
use super::param::ParamTensor;
use crate::error::{Error, Result};

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
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias(usize, usize),
    SoftmaxRows(usize),
    Sigmoid(usize),
    Log(usize),
    LogSigmoid(usize),
    Sum(usize),
    Mean(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Column(usize, usize),
    GatherRows(usize, Arc<[usize]>),
    ScatterAddRows(usize, Arc<[usize]>),
    RowDot(usize, usize),
    ScaleRows(usize, usize),
    SegmentSoftmax(usize, Arc<[usize]>),
    SpMM(Arc<CsrMatrix>, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when `var`
    /// does not track gradients or the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&DenseMatrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    // -softplus(-x)
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
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

    fn push(&mut self, value: DenseMatrix, op: Op, parents: &[usize]) -> Var {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: DenseMatrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.leaf(value, false)
    }

    /// Registers a parameter; it tracks gradients iff it is trainable.
    pub fn param(&mut self, p: &ParamTensor) -> Var {
        self.leaf(p.value.clone(), p.trainable)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    /// `a × bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_transposed(self.value(b))?;
        Ok(self.push(value, Op::MatMulT(a.0, b.0), &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        self.push(value, Op::Scale(a.0, k), &[a.0])
    }

    /// Adds a `1 × c` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != m.cols() {
            return Err(Error::shape("add_bias", m.shape(), b.shape()));
        }
        let mut value = m.clone();
        for r in 0..value.rows() {
            for (v, &bb) in value.row_mut(r).iter_mut().zip(b.as_slice()) {
                *v += bb;
            }
        }
        Ok(self.push(value, Op::AddBias(a.0, bias.0), &[a.0, bias.0]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = softmax_rows(self.value(a))?;
        Ok(self.push(value, Op::SoftmaxRows(a.0), &[a.0]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(stable_sigmoid);
        self.push(value, Op::Sigmoid(a.0), &[a.0])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).as_slice().iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidInput("log of a non-positive entry".into()));
        }
        let value = self.value(a).map(f64::ln);
        Ok(self.push(value, Op::Log(a.0), &[a.0]))
    }

    /// `ln σ(a)`, evaluated without overflow for large `|a|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(log_sigmoid);
        self.push(value, Op::LogSigmoid(a.0), &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::InvalidInput("mean of an empty matrix".into()));
        }
        let value = DenseMatrix::scalar(m.sum() / m.len() as f64);
        Ok(self.push(value, Op::Mean(a.0), &[a.0]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(Error::shape("concat_cols", self.shape(*first), self.shape(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                values.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = DenseMatrix::from_vec(rows, cols, values)?;
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(value, Op::ConcatCols(idx.clone()), &idx))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of nothing".into()))?;
        let mut value = DenseMatrix::zeros(0, self.value(*first).cols());
        for p in parts {
            let part = self.value(*p);
            if part.cols() != value.cols() {
                return Err(Error::shape("concat_rows", value.shape(), part.shape()));
            }
            value.append_rows(part)?;
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(value, Op::ConcatRows(idx.clone()), &idx))
    }

    /// Column `j` of `a` as an `n × 1` matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let m = self.value(a);
        if j >= m.cols() {
            return Err(Error::shape("column", m.shape(), (0, j)));
        }
        let values = (0..m.rows()).map(|r| m.get(r, j)).collect();
        let value = DenseMatrix::from_vec(m.rows(), 1, values)?;
        Ok(self.push(value, Op::Column(a.0, j), &[a.0]))
    }

    /// Rows of `a` selected by `index` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let m = self.value(a);
        let mut values = Vec::with_capacity(index.len() * m.cols());
        for &i in index.iter() {
            if i >= m.rows() {
                return Err(Error::shape("gather_rows", m.shape(), (i, 0)));
            }
            values.extend_from_slice(m.row(i));
        }
        let value = DenseMatrix::from_vec(index.len(), m.cols(), values)?;
        Ok(self.push(value, Op::GatherRows(a.0, index), &[a.0]))
    }

    /// Sums row `k` of `a` into output row `index[k]` of an `rows × c` result.
    pub fn scatter_add_rows(&mut self, a: Var, index: Arc<[usize]>, rows: usize) -> Result<Var> {
        let m = self.value(a);
        if index.len() != m.rows() {
            return Err(Error::shape("scatter_add_rows", m.shape(), (index.len(), 0)));
        }
        let mut value = DenseMatrix::zeros(rows, m.cols());
        for (k, &i) in index.iter().enumerate() {
            if i >= rows {
                return Err(Error::shape("scatter_add_rows", (rows, m.cols()), (i, 0)));
            }
            for (d, &s) in value.row_mut(i).iter_mut().zip(m.row(k)) {
                *d += s;
            }
        }
        Ok(self.push(value, Op::ScatterAddRows(a.0, index), &[a.0]))
    }

    /// Per-row inner products, `n × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("row_dot", x.shape(), y.shape()));
        }
        let values = (0..x.rows()).map(|r| dot(x.row(r), y.row(r))).collect();
        let value = DenseMatrix::from_vec(x.rows(), 1, values)?;
        Ok(self.push(value, Op::RowDot(a.0, b.0), &[a.0, b.0]))
    }

    /// Multiplies row `i` of `a` by `w[i]`, where `w` is `n × 1`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (m, s) = (self.value(a), self.value(w));
        if s.cols() != 1 || s.rows() != m.rows() {
            return Err(Error::shape("scale_rows", m.shape(), s.shape()));
        }
        let mut value = m.clone();
        for r in 0..value.rows() {
            let k = s.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|v| *v *= k);
        }
        Ok(self.push(value, Op::ScaleRows(a.0, w.0), &[a.0, w.0]))
    }

    /// Softmax of an `n × 1` column within each group
    /// `offsets[g]..offsets[g + 1]`. Empty groups are allowed.
    pub fn segment_softmax(&mut self, a: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let m = self.value(a);
        if m.cols() != 1 || offsets.last().copied() != Some(m.rows()) {
            return Err(Error::shape("segment_softmax", m.shape(), (offsets.len(), 1)));
        }
        if m.as_slice().iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput("softmax row contains NaN".into()));
        }
        let mut value = m.clone();
        for w in offsets.windows(2) {
            softmax_in_place(&mut value.as_mut_slice()[w[0]..w[1]]);
        }
        Ok(self.push(value, Op::SegmentSoftmax(a.0, offsets), &[a.0]))
    }

    /// Sparse-dense product `s × a`.
    pub fn spmm(&mut self, s: Arc<CsrMatrix>, a: Var) -> Result<Var> {
        let value = s.mul_dense(self.value(a))?;
        Ok(self.push(value, Op::SpMM(s, a.0), &[a.0]))
    }

    /// Adjoints of a scalar `loss` with respect to every tracking node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        let Some(l) = lv.to_scalar() else {
            return Err(Error::Contract(format!(
                "loss must be a 1x1 scalar, got {:?}",
                lv.shape()
            )));
        };
        if !l.is_finite() {
            return Err(Error::Contract(format!("loss is not finite: {l}")));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(DenseMatrix::scalar(1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<DenseMatrix>], target: usize, g: DenseMatrix) -> Result<()> {
        if !self.nodes[target].requires_grad {
            return Ok(());
        }
        match &mut grads[target] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn tracks(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, i: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |k: usize| &self.nodes[k].value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.tracks(a) {
                    self.accumulate(grads, a, g.matmul_transposed(val(b))?)?;
                }
                if self.tracks(b) {
                    self.accumulate(grads, b, val(a).transposed_matmul(g)?)?;
                }
            }
            &Op::MatMulT(a, b) => {
                if self.tracks(a) {
                    self.accumulate(grads, a, matmul(g, val(b))?)?;
                }
                if self.tracks(b) {
                    self.accumulate(grads, b, g.transposed_matmul(val(a))?)?;
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.clone())?;
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.scale(-1.0))?;
            }
            &Op::Mul(a, b) => {
                if self.tracks(a) {
                    self.accumulate(grads, a, g.hadamard(val(b))?)?;
                }
                if self.tracks(b) {
                    self.accumulate(grads, b, g.hadamard(val(a))?)?;
                }
            }
            &Op::Scale(a, k) => self.accumulate(grads, a, g.scale(k))?,
            &Op::AddBias(a, bias) => {
                self.accumulate(grads, a, g.clone())?;
                if self.tracks(bias) {
                    let mut gb = DenseMatrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &s) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    self.accumulate(grads, bias, gb)?;
                }
            }
            &Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = dot(yr, gr);
                    for ((d, &yy), &gg) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = yy * (gg - inner);
                    }
                }
                self.accumulate(grads, a, ga)?;
            }
            &Op::Sigmoid(a) => {
                let ga = node.value.zip_map(g, "sigmoid", |y, gg| gg * y * (1.0 - y))?;
                self.accumulate(grads, a, ga)?;
            }
            &Op::Log(a) => {
                let ga = val(a).zip_map(g, "log", |x, gg| gg / x)?;
                self.accumulate(grads, a, ga)?;
            }
            &Op::LogSigmoid(a) => {
                let ga = val(a).zip_map(g, "log_sigmoid", |x, gg| gg * stable_sigmoid(-x))?;
                self.accumulate(grads, a, ga)?;
            }
            &Op::Sum(a) => {
                let (r, c) = val(a).shape();
                self.accumulate(grads, a, DenseMatrix::filled(r, c, g.as_slice()[0]))?;
            }
            &Op::Mean(a) => {
                let (r, c) = val(a).shape();
                let k = g.as_slice()[0] / (r * c) as f64;
                self.accumulate(grads, a, DenseMatrix::filled(r, c, k))?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    if self.tracks(p) {
                        let mut gp = DenseMatrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(grads, p, gp)?;
                    }
                    offset += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let cols = g.cols();
                for &p in parts {
                    let rows = val(p).rows();
                    if self.tracks(p) {
                        let slice = g.as_slice()[offset * cols..(offset + rows) * cols].to_vec();
                        self.accumulate(grads, p, DenseMatrix::from_vec(rows, cols, slice)?)?;
                    }
                    offset += rows;
                }
            }
            &Op::Column(a, j) => {
                let (r, c) = val(a).shape();
                let mut ga = DenseMatrix::zeros(r, c);
                for row in 0..r {
                    ga.set(row, j, g.get(row, 0));
                }
                self.accumulate(grads, a, ga)?;
            }
            Op::GatherRows(a, index) => {
                let (r, c) = val(*a).shape();
                let mut ga = DenseMatrix::zeros(r, c);
                for (k, &row) in index.iter().enumerate() {
                    for (d, &s) in ga.row_mut(row).iter_mut().zip(g.row(k)) {
                        *d += s;
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::ScatterAddRows(a, index) => {
                let c = g.cols();
                let mut values = Vec::with_capacity(index.len() * c);
                for &row in index.iter() {
                    values.extend_from_slice(g.row(row));
                }
                self.accumulate(grads, *a, DenseMatrix::from_vec(index.len(), c, values)?)?;
            }
            &Op::RowDot(a, b) => {
                let (x, y) = (val(a), val(b));
                if self.tracks(a) {
                    let mut ga = y.clone();
                    for r in 0..ga.rows() {
                        let k = g.get(r, 0);
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    }
                    self.accumulate(grads, a, ga)?;
                }
                if self.tracks(b) {
                    let mut gb = x.clone();
                    for r in 0..gb.rows() {
                        let k = g.get(r, 0);
                        gb.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    }
                    self.accumulate(grads, b, gb)?;
                }
            }
            &Op::ScaleRows(a, w) => {
                let (m, s) = (val(a), val(w));
                if self.tracks(a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let k = s.get(r, 0);
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    }
                    self.accumulate(grads, a, ga)?;
                }
                if self.tracks(w) {
                    let values = (0..m.rows()).map(|r| dot(g.row(r), m.row(r))).collect();
                    self.accumulate(grads, w, DenseMatrix::from_vec(m.rows(), 1, values)?)?;
                }
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = node.value.as_slice();
                let gs = g.as_slice();
                let mut ga = DenseMatrix::zeros(y.len(), 1);
                let out = ga.as_mut_slice();
                for w in offsets.windows(2) {
                    let range = w[0]..w[1];
                    let inner = dot(&y[range.clone()], &gs[range.clone()]);
                    for e in range {
                        out[e] = y[e] * (gs[e] - inner);
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::SpMM(s, a) => {
                self.accumulate(grads, *a, s.transposed_mul_dense(g)?)?;
            }
        }
        Ok(())
    }
}
