//! Dense row-major matrices and a define-by-run gradient tape.
//!
//! Every value in the model is a 2-D `f64` matrix. Differentiable code records
//! its operations on a [`Tape`]; calling [`Tape::backward`] replays the tape in
//! reverse and accumulates gradients into every leaf that requires them.
//! Leaves may borrow their data (parameters, graph constants) so binding a
//! large weight tensor costs nothing until a gradient reaches it.

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major real matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::Contract(format!(
                "data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally long rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(TensorError::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        gemm(self, false, other, false, &mut out);
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(TensorError::Shape {
                op: "add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scaled(&self, c: f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Largest absolute entry-wise difference; `inf` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out += op(a) * op(b)` where `op` optionally transposes. `out` must be
/// pre-shaped to the product.
fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool, out: &mut Tensor) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    debug_assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides describe the row-major buffers of `a`, `b` and `out`,
    // whose lengths match the (m, k), (k, n) and (m, n) shapes checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            1.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Handle to a value recorded on a [`Tape`].
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
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Transpose(Var),
    Scale(Var, f64),
    RowSoftmax(Var),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    SumRows(Var),
    Dropout(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    CrossEntropy(Var, usize),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Ordered record of operations. Inputs always precede the ops that use them,
/// so reverse recording order is a valid reverse topological order.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Owned leaf.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Borrowed trainable leaf.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated on a leaf by previous `backward` calls.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), rg))
    }

    /// `x + 1·row`, broadcasting a `1×c` row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xs, rs) = (self.shape(x), self.shape(row));
        if rs.0 != 1 || rs.1 != xs.1 {
            return Err(TensorError::Shape {
                op: "add_row",
                left: xs,
                right: rs,
            });
        }
        let mut out = self.value(x).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..xs.0 {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Cow::Owned(out), Op::AddRow(x, row), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|v| v.max(0.0)).collect(),
        };
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::Relu(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::Transpose(x), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).scaled(c);
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::Scale(x, c), rg)
    }

    /// Softmax along each row with per-row max subtraction.
    pub fn row_softmax(&mut self, x: Var) -> Var {
        let out = row_softmax(self.value(x));
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::RowSoftmax(x), rg)
    }

    /// Stacks the inputs' rows in argument order. All inputs must share a
    /// column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Contract("concat_rows of zero tensors".into()));
        };
        let cols = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols != cols {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    left: self.shape(first),
                    right: t.shape(),
                });
            }
            rows += t.rows;
            data.extend_from_slice(&t.data);
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor { rows, cols, data };
        Ok(self.push(Cow::Owned(out), Op::ConcatRows(parts.to_vec()), rg))
    }

    /// `1×d` column means. The mean of zero rows is zero.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut out = column_sums(t);
        if t.rows > 0 {
            let inv = 1.0 / t.rows as f64;
            for v in &mut out.data {
                *v *= inv;
            }
        }
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::MeanRows(x), rg)
    }

    /// `1×d` column sums, accumulated in ascending row order.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let out = column_sums(self.value(x));
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::SumRows(x), rg)
    }

    /// Inverted dropout. In training mode each entry is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; otherwise the
    /// input passes through unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Contract(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.data.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
        };
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), Op::Dropout(x, mask), rg))
    }

    /// Selects rows of `x` in the given order.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * t.cols);
        for &r in rows {
            if r >= t.rows {
                return Err(TensorError::Contract(format!(
                    "gather_rows index {r} out of range for {} rows",
                    t.rows
                )));
            }
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor {
            rows: rows.len(),
            cols: t.cols,
            data,
        };
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), Op::GatherRows(x, rows.to_vec()), rg))
    }

    /// Leading `n` columns of `x`.
    pub fn slice_cols(&mut self, x: Var, n: usize) -> Result<Var> {
        let t = self.value(x);
        if n > t.cols {
            return Err(TensorError::Shape {
                op: "slice_cols",
                left: t.shape(),
                right: (t.rows, n),
            });
        }
        if n == t.cols {
            return Ok(x);
        }
        let out = Tensor::from_fn(t.rows, n, |i, j| t.get(i, j));
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), Op::SliceCols(x, n), rg))
    }

    /// `logsumexp(z) - z[label]` for a `1×C` logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.rows != 1 || label >= t.cols {
            return Err(TensorError::Contract(format!(
                "cross_entropy expects 1xC logits with label < C, got {:?} and label {label}",
                t.shape()
            )));
        }
        let z = t.data();
        let loss = log_sum_exp(z) - z[label];
        let rg = self.rg(logits);
        Ok(self.push(
            Cow::Owned(Tensor::filled(1, 1, loss)),
            Op::CrossEntropy(logits, label),
            rg,
        ))
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::Contract("loss is not on this tape".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(TensorError::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (v, dg) in self.local_grads(i, &self.nodes[i].op, &g) {
                accumulate(&mut grads, v, dg);
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each input requiring grad.
    fn local_grads(&self, i: usize, op: &Op, g: &Tensor) -> Vec<(Var, Tensor)> {
        let mut out = Vec::new();
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.rg(a) {
                    let mut da = Tensor::zeros(av.rows, av.cols);
                    gemm(g, false, bv, true, &mut da);
                    out.push((a, da));
                }
                if self.rg(b) {
                    let mut db = Tensor::zeros(bv.rows, bv.cols);
                    gemm(av, true, g, false, &mut db);
                    out.push((b, db));
                }
            }
            Op::Add(a, b) => {
                if self.rg(a) {
                    out.push((a, g.clone()));
                }
                if self.rg(b) {
                    out.push((b, g.clone()));
                }
            }
            Op::AddRow(x, row) => {
                if self.rg(x) {
                    out.push((x, g.clone()));
                }
                if self.rg(row) {
                    out.push((row, column_sums(g)));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(x);
                let data = g
                    .data
                    .iter()
                    .zip(&xv.data)
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                out.push((x, Tensor { rows: g.rows, cols: g.cols, data }));
            }
            Op::Transpose(x) => out.push((x, g.transpose())),
            Op::Scale(x, c) => out.push((x, g.scaled(c))),
            Op::RowSoftmax(x) => {
                let y = &self.nodes[i].value;
                let mut dx = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (d, (yv, gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *d = yv * (gv - dot);
                    }
                }
                out.push((x, dx));
            }
            Op::ConcatRows(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows;
                    if self.rg(p) {
                        let cols = g.cols;
                        let data = g.data[start * cols..(start + rows) * cols].to_vec();
                        out.push((p, Tensor { rows, cols, data }));
                    }
                    start += rows;
                }
            }
            Op::MeanRows(x) | Op::SumRows(x) => {
                let xv = self.value(x);
                let c = match op {
                    Op::MeanRows(_) if xv.rows > 0 => 1.0 / xv.rows as f64,
                    _ => 1.0,
                };
                let mut dx = Tensor::zeros(xv.rows, xv.cols);
                for r in 0..xv.rows {
                    for (d, gv) in dx.row_mut(r).iter_mut().zip(&g.data) {
                        *d = gv * c;
                    }
                }
                out.push((x, dx));
            }
            Op::Dropout(x, ref mask) => {
                let data = g.data.iter().zip(mask).map(|(g, m)| g * m).collect();
                out.push((x, Tensor { rows: g.rows, cols: g.cols, data }));
            }
            Op::GatherRows(x, ref idx) => {
                let xv = self.value(x);
                let mut dx = Tensor::zeros(xv.rows, xv.cols);
                for (k, &r) in idx.iter().enumerate() {
                    for (d, gv) in dx.row_mut(r).iter_mut().zip(g.row(k)) {
                        *d += gv;
                    }
                }
                out.push((x, dx));
            }
            Op::SliceCols(x, n) => {
                let xv = self.value(x);
                let mut dx = Tensor::zeros(xv.rows, xv.cols);
                for r in 0..xv.rows {
                    dx.row_mut(r)[..n].copy_from_slice(g.row(r));
                }
                out.push((x, dx));
            }
            Op::CrossEntropy(logits, label) => {
                let z = self.value(logits);
                let mut p = row_softmax(z);
                p.data[label] -= 1.0;
                let scale = g.data[0];
                out.push((logits, p.scaled(scale)));
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols);
    for r in 0..t.rows {
        for (o, v) in out.data.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    out
}

/// Row-wise softmax on a plain matrix.
pub fn row_softmax(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows {
        let row = out.row_mut(r);
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
    out
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
