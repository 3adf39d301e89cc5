//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every primitive evaluates eagerly and appends one record to the tape.
//! Records are stored in creation order, which is a topological order, so
//! [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use uspgnn::diffkernel::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::row_vector(&[0.0, 0.0]), true);
//! let y = tape.sigmoid(x);
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[0.25, 0.25]);
//! ```

use std::sync::Arc;

use super::tensor::{gemm_acc, SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    MulCol { a: Var, col: Var },
    Affine { a: Var, scale: f64 },
    ConcatCols(Vec<Var>),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    GatherRows { a: Var, index: Arc<[usize]> },
    ScatterAddRows { a: Var, index: Arc<[usize]> },
    Spmm { m: Arc<SparseMatrix>, a: Var },
    MeanRows(Var),
    Sum(Var),
    SumCols(Var),
    CosineRows { a: Var, b: Var },
    SegmentSoftmax { a: Var, segments: Arc<[usize]>, n: usize },
    Reshape(Var),
    BceOneHot { p: Var, targets: Arc<[usize]>, eps: f64 },
    CrossEntropy { logits: Var, targets: Arc<[usize]> },
    Lerp { a: Var, b: Var, t: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// require gradients or is not reachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
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

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = Tensor::zeros(ta.rows(), tb.cols());
        gemm_acc(ta, false, tb, false, &mut out);
        Ok(self.push(out, Op::MatMul { a, b, trans_b: false }, &[a, b]))
    }

    /// `a · bᵀ`; with `b` stored as `out × in` this is a linear layer.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::shape(
                "matmul_t",
                format!("{:?} · {:?}ᵀ", ta.shape(), tb.shape()),
            ));
        }
        let mut out = Tensor::zeros(ta.rows(), tb.rows());
        gemm_acc(ta, false, tb, true, &mut out);
        Ok(self.push(out, Op::MatMul { a, b, trans_b: true }, &[a, b]))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", ta.shape(), tr.shape()),
            ));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow { a, row }, &[a, row]))
    }

    /// Scales row `i` of `a` by `col[i]` (`col` is `r × 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(Error::shape(
                "mul_col",
                format!("{:?} * col {:?}", ta.shape(), tc.shape()),
            ));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            let s = tc.data()[r];
            out.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.push(out, Op::MulCol { a, col }, &[a, col]))
    }

    /// `scale · a + shift` elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine { a, scale }, &[a])
    }

    /// `1 − a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        self.push(out, Op::Affine { a, scale: -1.0 }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(Error::shape(
                "concat_cols",
                format!("{} rows vs {:?}", rows, self.value(*bad).shape()),
            ));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: impl Into<Arc<[usize]>>) -> Result<Var> {
        let index: Arc<[usize]> = index.into();
        let ta = self.value(a);
        if let Some(bad) = index.iter().find(|&&i| i >= ta.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {:?}", ta.shape()),
            ));
        }
        let mut out = Tensor::zeros(index.len(), ta.cols());
        for (r, &src) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(ta.row(src));
        }
        Ok(self.push(out, Op::GatherRows { a, index }, &[a]))
    }

    /// Output has `n_out` rows; row `index[i]` accumulates row `i` of `a`.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: impl Into<Arc<[usize]>>,
        n_out: usize,
    ) -> Result<Var> {
        let index: Arc<[usize]> = index.into();
        let ta = self.value(a);
        if index.len() != ta.rows() || index.iter().any(|&i| i >= n_out) {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("{} indices into {n_out} rows for {:?}", index.len(), ta.shape()),
            ));
        }
        let mut out = Tensor::zeros(n_out, ta.cols());
        for (r, &dst) in index.iter().enumerate() {
            for (o, v) in out.row_mut(dst).iter_mut().zip(ta.row(r)) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::ScatterAddRows { a, index }, &[a]))
    }

    /// `m · a` for a constant sparse `m`.
    pub fn spmm(&mut self, m: &Arc<SparseMatrix>, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if m.cols() != ta.rows() {
            return Err(Error::shape(
                "spmm",
                format!("sparse {}x{} · {:?}", m.rows(), m.cols(), ta.shape()),
            ));
        }
        let out = m.mul_dense(ta);
        Ok(self.push(out, Op::Spmm { m: Arc::clone(m), a }, &[a]))
    }

    /// Mean over rows, `r × c → 1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rows() == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let mut out = Tensor::zeros(1, ta.cols());
        for r in 0..ta.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(ta.row(r)) {
                *o += v;
            }
        }
        let n = ta.rows() as f64;
        out.data_mut().iter_mut().for_each(|v| *v /= n);
        Ok(self.push(out, Op::MeanRows(a), &[a]))
    }

    /// Sum of all entries, `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Per-row sums, `r × c → r × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let sums: Vec<f64> = (0..ta.rows()).map(|r| ta.row(r).iter().sum()).collect();
        self.push(Tensor::col_vector(&sums), Op::SumCols(a), &[a])
    }

    /// Row-wise cosine similarity, `r × 1`. Rows with zero norm give 0.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("cosine_rows", ta, tb)?;
        let sims: Vec<f64> = (0..ta.rows())
            .map(|r| {
                let (x, y) = (ta.row(r), tb.row(r));
                let (nx, ny) = (dot(x, x).sqrt(), dot(y, y).sqrt());
                if nx == 0.0 || ny == 0.0 {
                    0.0
                } else {
                    dot(x, y) / (nx * ny)
                }
            })
            .collect();
        Ok(self.push(Tensor::col_vector(&sims), Op::CosineRows { a, b }, &[a, b]))
    }

    /// Softmax of an `r × 1` column within groups: entries sharing
    /// `segments[i]` are normalized together.
    pub fn segment_softmax(
        &mut self,
        a: Var,
        segments: impl Into<Arc<[usize]>>,
        n_segments: usize,
    ) -> Result<Var> {
        let segments: Arc<[usize]> = segments.into();
        let ta = self.value(a);
        if ta.cols() != 1 || segments.len() != ta.rows() || segments.iter().any(|&s| s >= n_segments)
        {
            return Err(Error::shape(
                "segment_softmax",
                format!("{:?} with {} segment ids", ta.shape(), segments.len()),
            ));
        }
        let x = ta.data();
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (i, &s) in segments.iter().enumerate() {
            max[s] = max[s].max(x[i]);
        }
        let mut total = vec![0.0; n_segments];
        let mut out: Vec<f64> = segments
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let e = (x[i] - max[s]).exp();
                total[s] += e;
                e
            })
            .collect();
        for (v, &s) in out.iter_mut().zip(segments.iter()) {
            *v /= total[s];
        }
        let n = ta.rows();
        let out = Tensor::from_vec(n, 1, out)?;
        Ok(self.push(
            out,
            Op::SegmentSoftmax {
                a,
                segments,
                n: n_segments,
            },
            &[a],
        ))
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.len() != rows * cols {
            return Err(Error::shape(
                "reshape",
                format!("{:?} to {rows}x{cols}", ta.shape()),
            ));
        }
        let out = Tensor::from_vec(rows, cols, ta.data().to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Per-row binary cross-entropy against a one-hot target, summed over
    /// columns: `−Σ_j [y_j ln p_j + (1−y_j) ln(1−p_j)]`, with `p` clamped to
    /// `[eps, 1−eps]`. Output is `r × 1`.
    pub fn bce_one_hot(
        &mut self,
        p: Var,
        targets: impl Into<Arc<[usize]>>,
        eps: f64,
    ) -> Result<Var> {
        let targets: Arc<[usize]> = targets.into();
        let tp = self.value(p);
        check_targets("bce_one_hot", tp, &targets)?;
        let losses: Vec<f64> = (0..tp.rows())
            .map(|r| {
                tp.row(r)
                    .iter()
                    .enumerate()
                    .map(|(j, &pj)| {
                        let pc = pj.clamp(eps, 1.0 - eps);
                        if j == targets[r] {
                            -pc.ln()
                        } else {
                            -(1.0 - pc).ln()
                        }
                    })
                    .sum()
            })
            .collect();
        Ok(self.push(
            Tensor::col_vector(&losses),
            Op::BceOneHot { p, targets, eps },
            &[p],
        ))
    }

    /// Per-row softmax cross-entropy from logits, `r × 1`.
    pub fn cross_entropy(&mut self, logits: Var, targets: impl Into<Arc<[usize]>>) -> Result<Var> {
        let targets: Arc<[usize]> = targets.into();
        let tl = self.value(logits);
        check_targets("cross_entropy", tl, &targets)?;
        let losses: Vec<f64> = (0..tl.rows())
            .map(|r| {
                let row = tl.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - row[targets[r]]
            })
            .collect();
        Ok(self.push(
            Tensor::col_vector(&losses),
            Op::CrossEntropy { logits, targets },
            &[logits],
        ))
    }

    /// `(1 − t)·a + t·b` for scalars. An input whose weight is exactly zero
    /// receives no gradient at all.
    pub fn lerp(&mut self, a: Var, b: Var, t: f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != (1, 1) || tb.shape() != (1, 1) {
            return Err(Error::shape(
                "lerp",
                format!("{:?}, {:?} (scalars required)", ta.shape(), tb.shape()),
            ));
        }
        let out = Tensor::scalar((1.0 - t) * ta.item() + t * tb.item());
        let inputs: &[Var] = if t == 0.0 {
            &[a]
        } else if t == 1.0 {
            &[b]
        } else {
            &[a, b]
        };
        Ok(self.push(out, Op::Lerp { a, b, t }, inputs))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {shape:?}"),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let (r, c) = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.grad_slot(grads, *a) {
                    // C = A·B → dA = G·Bᵀ ; C = A·Bᵀ → dA = G·B
                    gemm_acc(g, false, tb, !trans_b, ga);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    if *trans_b {
                        gemm_acc(g, true, ta, false, gb);
                    } else {
                        gemm_acc(ta, true, g, false, gb);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    for (o, v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for ((o, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *o += gv * bv;
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    for ((o, gv), av) in gb.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *o += gv * av;
                    }
                }
            }
            Op::AddRow { a, row } => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gr) = self.grad_slot(grads, *row) {
                    for r in 0..g.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::MulCol { a, col } => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for r in 0..g.rows() {
                        let s = tc.data()[r];
                        for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o += s * v;
                        }
                    }
                }
                if let Some(gc) = self.grad_slot(grads, *col) {
                    for r in 0..g.rows() {
                        gc.data_mut()[r] += dot(g.row(r), ta.row(r));
                    }
                }
            }
            Op::Affine { a, scale } => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for (o, v) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += scale * v;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let width = self.value(*p).cols();
                    if let Some(gp) = self.grad_slot(grads, *p) {
                        for r in 0..g.rows() {
                            for (o, v) in gp
                                .row_mut(r)
                                .iter_mut()
                                .zip(&g.row(r)[offset..offset + width])
                            {
                                *o += v;
                            }
                        }
                    }
                    offset += width;
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for ((o, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * yv * (1.0 - yv);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for ((o, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for r in 0..g.rows() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let inner = dot(gr, yr);
                        for ((o, gv), yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += yv * (gv - inner);
                        }
                    }
                }
            }
            Op::GatherRows { a, index } => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for (r, &src) in index.iter().enumerate() {
                        for (o, v) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::ScatterAddRows { a, index } => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for (r, &dst) in index.iter().enumerate() {
                        for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(dst)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Spmm { m, a } => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    m.mul_dense_transposed_acc(g, ga);
                }
            }
            Op::MeanRows(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let n = ga.rows() as f64;
                    for r in 0..ga.rows() {
                        for (o, v) in ga.row_mut(r).iter_mut().zip(g.data()) {
                            *o += v / n;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let s = g.item();
                    ga.data_mut().iter_mut().for_each(|o| *o += s);
                }
            }
            Op::SumCols(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for r in 0..ga.rows() {
                        let s = g.data()[r];
                        ga.row_mut(r).iter_mut().for_each(|o| *o += s);
                    }
                }
            }
            Op::CosineRows { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                for r in 0..g.rows() {
                    let (x, z) = (ta.row(r), tb.row(r));
                    let (nx, nz) = (dot(x, x).sqrt(), dot(z, z).sqrt());
                    if nx == 0.0 || nz == 0.0 {
                        continue;
                    }
                    let cos = y.data()[r];
                    let gr = g.data()[r];
                    if let Some(ga) = self.grad_slot(grads, *a) {
                        for ((o, xv), zv) in ga.row_mut(r).iter_mut().zip(x).zip(z) {
                            *o += gr * (zv / (nx * nz) - cos * xv / (nx * nx));
                        }
                    }
                    if let Some(gb) = self.grad_slot(grads, *b) {
                        for ((o, xv), zv) in gb.row_mut(r).iter_mut().zip(x).zip(z) {
                            *o += gr * (xv / (nx * nz) - cos * zv / (nz * nz));
                        }
                    }
                }
            }
            Op::SegmentSoftmax { a, segments, n } => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let mut inner = vec![0.0; *n];
                    for (i, &s) in segments.iter().enumerate() {
                        inner[s] += g.data()[i] * y.data()[i];
                    }
                    for (i, &s) in segments.iter().enumerate() {
                        ga.data_mut()[i] += y.data()[i] * (g.data()[i] - inner[s]);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for (o, v) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
            }
            Op::BceOneHot { p, targets, eps } => {
                let tp = self.value(*p);
                if let Some(gp) = self.grad_slot(grads, *p) {
                    for r in 0..tp.rows() {
                        let gr = g.data()[r];
                        for (j, (o, &pj)) in gp.row_mut(r).iter_mut().zip(tp.row(r)).enumerate() {
                            if pj < *eps || pj > 1.0 - eps {
                                continue;
                            }
                            *o += if j == targets[r] {
                                -gr / pj
                            } else {
                                gr / (1.0 - pj)
                            };
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let tl = self.value(*logits);
                if let Some(gl) = self.grad_slot(grads, *logits) {
                    for r in 0..tl.rows() {
                        let mut probs = tl.row(r).to_vec();
                        softmax_in_place(&mut probs);
                        probs[targets[r]] -= 1.0;
                        let gr = g.data()[r];
                        for (o, pv) in gl.row_mut(r).iter_mut().zip(&probs) {
                            *o += gr * pv;
                        }
                    }
                }
            }
            Op::Lerp { a, b, t } => {
                let gv = g.item();
                if *t != 1.0 {
                    if let Some(ga) = self.grad_slot(grads, *a) {
                        ga.data_mut()[0] += (1.0 - t) * gv;
                    }
                }
                if *t != 0.0 {
                    if let Some(gb) = self.grad_slot(grads, *b) {
                        gb.data_mut()[0] += t * gv;
                    }
                }
            }
        }
    }
}

fn check_targets(op: &'static str, t: &Tensor, targets: &[usize]) -> Result<()> {
    if targets.len() != t.rows() {
        return Err(Error::shape(
            op,
            format!("{} targets for {:?}", targets.len(), t.shape()),
        ));
    }
    if let Some(bad) = targets.iter().find(|&&y| y >= t.cols()) {
        return Err(Error::Input(format!(
            "{op}: target {bad} out of range for {} classes",
            t.cols()
        )));
    }
    Ok(())
}
