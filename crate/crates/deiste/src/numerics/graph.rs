//! Append-only compute graph with reverse-mode differentiation.
//!
//! The graph is an eager tape: every operation evaluates immediately and
//! records a node. Insertion order is the topological order, so the backward
//! pass is a single reverse sweep that visits each node exactly once.
//! Gradients land in each node's tensor (`Tensor::grad`).

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Cosine of a vector with norm below this is defined as 0 (neutral match).
pub const COSINE_NORM_EPS: f64 = 1e-12;

/// Probabilities are clipped to `[CLIP, 1 - CLIP]` inside the cross-entropy.
const BCE_CLIP: f64 = 1e-12;

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row/column selector for operations on interaction matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul,
    Add,
    Mul,
    Tanh,
    Sigmoid,
    Scale(f64),
    AddScalar(#[allow(dead_code)] f64),
    Clamp { lo: f64, hi: f64 },
    Recip,
    MaskedSoftmax { mask: Vec<bool> },
    MaxPoolRows { argmax: Vec<usize> },
    Cosine,
    CosineColumns { a_mask: Vec<bool>, b_mask: Vec<bool> },
    GatherCols { indices: Vec<Option<usize>> },
    ShiftCols { offset: isize },
    ColScale,
    AddColVec,
    ConcatRows { part_rows: Vec<usize> },
    ConcatVec { part_lens: Vec<usize> },
    SliceCols { start: usize },
    Transpose,
    Dot,
    Sum,
    BinaryCrossEntropy { label: f64 },
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// Append-only sequence of operation records plus their output tensors.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Output tensor of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of a node after [`Graph::backward`], if any flowed to it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        debug_assert!(value.all_finite(), "non-finite forward output");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value });
        id
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Register a tensor as a graph input. Data is owned by the graph.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    // ── Linear algebra ───────────────────────────────────────────────

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        gemm_nn(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::Matmul, vec![a, b], value))
    }

    /// `x` transposed.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::contract(format!(
                "transpose expects a matrix, got shape {:?}",
                t.shape()
            )));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; r * c];
        transpose_into(t.data(), &mut out, r, c);
        let value = Tensor::matrix(c, r, out)?;
        Ok(self.push(Op::Transpose, vec![x], value))
    }

    /// Inner product of two equal-length vectors, as a scalar tensor.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || tb.rank() != 1 || ta.numel() != tb.numel() {
            return Err(Error::shape("dot", ta.shape(), tb.shape()));
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot, vec![a, b], Tensor::scalar(s)))
    }

    // ── Elementwise ──────────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Add, vec![a, b], value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul, vec![a, b], value))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.push(Op::Tanh, vec![x], value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.push(Op::Sigmoid, vec![x], value)
    }

    /// Multiply every entry by the constant `c`.
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|v| c * v).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.push(Op::Scale(c), vec![x], value)
    }

    /// Add the constant `c` to every entry.
    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|v| c + v).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.push(Op::AddScalar(c), vec![x], value)
    }

    /// Clamp entries to `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.clamp(lo, hi)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.push(Op::Clamp { lo, hi }, vec![x], value)
    }

    /// Entrywise reciprocal. Callers are expected to keep inputs away from 0.
    pub fn recip(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|v| 1.0 / v).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.push(Op::Recip, vec![x], value)
    }

    // ── Softmax / pooling / similarity ───────────────────────────────

    /// Exp-normalize over unmasked entries; masked entries output exactly 0.
    ///
    /// Accepts a vector (one row) or a matrix (softmax applied per row); the
    /// mask always runs along the last dimension.
    pub fn masked_softmax(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let t = self.value(x);
        let (rows, cols) = row_major_view(t)?;
        if mask.len() != cols {
            return Err(Error::contract(format!(
                "masked_softmax: mask length {} does not match width {}",
                mask.len(),
                cols
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::degenerate(
                "masked_softmax: every position is masked".to_string(),
            ));
        }
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            let out = &mut data[r * cols..(r + 1) * cols];
            softmax_row(row, mask, out);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(Op::MaskedSoftmax { mask: mask.to_vec() }, vec![x], value))
    }

    /// Per-row maximum over columns. Returns the pooled vector and the column
    /// index of each maximum (lowest index wins ties); the backward pass
    /// deposits gradient only at those indices.
    pub fn max_pool_rows(&mut self, x: NodeId) -> Result<(NodeId, Vec<usize>)> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::contract(format!(
                "max_pool_rows expects a matrix, got shape {:?}",
                t.shape()
            )));
        }
        let (rows, cols) = (t.rows(), t.cols());
        if cols == 0 {
            return Err(Error::EmptySequence("max_pool_rows over zero columns"));
        }
        let mut values = Vec::with_capacity(rows);
        let mut argmax = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            values.push(row[best]);
            argmax.push(best);
        }
        let id = self.push(
            Op::MaxPoolRows {
                argmax: argmax.clone(),
            },
            vec![x],
            Tensor::vector(values),
        );
        Ok((id, argmax))
    }

    /// Cosine similarity of two equal-length vectors. A vector with norm
    /// below [`COSINE_NORM_EPS`] makes the result 0 by convention, with zero
    /// gradient. Both operands are differentiable otherwise.
    pub fn cosine(&mut self, u: NodeId, v: NodeId) -> Result<NodeId> {
        let (tu, tv) = (self.value(u), self.value(v));
        if tu.rank() != 1 || tv.rank() != 1 || tu.numel() != tv.numel() {
            return Err(Error::shape("cosine", tu.shape(), tv.shape()));
        }
        let (val, _, _) = cosine_pair(tu.data(), tv.data());
        Ok(self.push(Op::Cosine, vec![u, v], Tensor::scalar(val)))
    }

    /// Cosine similarity of every column pair: `a` is `[d, n_a]`, `b` is
    /// `[d, n_b]`, output is `[n_a, n_b]`. Entries touching a masked column
    /// are fixed at -1 (worst match) and carry no gradient.
    pub fn cosine_columns(
        &mut self,
        a: NodeId,
        b: NodeId,
        a_mask: &[bool],
        b_mask: &[bool],
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.rows() != tb.rows() {
            return Err(Error::shape("cosine_columns", ta.shape(), tb.shape()));
        }
        let (d, na, nb) = (ta.rows(), ta.cols(), tb.cols());
        if a_mask.len() != na || b_mask.len() != nb {
            return Err(Error::contract(format!(
                "cosine_columns: mask lengths {}/{} do not match column counts {}/{}",
                a_mask.len(),
                b_mask.len(),
                na,
                nb
            )));
        }
        let norms_a = column_norms(ta.data(), d, na);
        let norms_b = column_norms(tb.data(), d, nb);
        let mut data = vec![-1.0; na * nb];
        for i in 0..na {
            if !a_mask[i] {
                continue;
            }
            for j in 0..nb {
                if !b_mask[j] {
                    continue;
                }
                data[i * nb + j] = if norms_a[i] < COSINE_NORM_EPS || norms_b[j] < COSINE_NORM_EPS {
                    0.0
                } else {
                    column_dot(ta.data(), tb.data(), d, na, nb, i, j) / (norms_a[i] * norms_b[j])
                };
            }
        }
        let value = Tensor::matrix(na, nb, data)?;
        Ok(self.push(
            Op::CosineColumns {
                a_mask: a_mask.to_vec(),
                b_mask: b_mask.to_vec(),
            },
            vec![a, b],
            value,
        ))
    }

    // ── Structure ────────────────────────────────────────────────────

    /// Gather rows of `table` (`[v, d]`) as output columns (`[d, n]`).
    /// A `None` index yields a zero column with no gradient; used for
    /// padded positions.
    pub fn gather_cols(&mut self, table: NodeId, indices: &[Option<usize>]) -> Result<NodeId> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::contract(format!(
                "gather_cols expects a matrix table, got shape {:?}",
                t.shape()
            )));
        }
        let (v, d, n) = (t.rows(), t.cols(), indices.len());
        if let Some(bad) = indices.iter().flatten().find(|&&i| i >= v) {
            return Err(Error::contract(format!(
                "gather_cols: index {bad} out of range for table with {v} rows"
            )));
        }
        let mut data = vec![0.0; d * n];
        for (j, idx) in indices.iter().enumerate() {
            if let Some(i) = idx {
                for r in 0..d {
                    data[r * n + j] = t.data()[i * d + r];
                }
            }
        }
        let value = Tensor::matrix(d, n, data)?;
        Ok(self.push(
            Op::GatherCols {
                indices: indices.to_vec(),
            },
            vec![table],
            value,
        ))
    }

    /// Shift columns by `offset` (positive = right), filling with zeros.
    /// `shift_cols(x, 1)` puts column `i-1` at position `i`.
    pub fn shift_cols(&mut self, x: NodeId, offset: isize) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::contract(format!(
                "shift_cols expects a matrix, got shape {:?}",
                t.shape()
            )));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut data = vec![0.0; r * c];
        for j in 0..c {
            let src = j as isize - offset;
            if (0..c as isize).contains(&src) {
                let src = src as usize;
                for row in 0..r {
                    data[row * c + j] = t.data()[row * c + src];
                }
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        Ok(self.push(Op::ShiftCols { offset }, vec![x], value))
    }

    /// Scale column `i` of `x` by `alpha[i]`. Differentiable in both.
    pub fn col_scale(&mut self, x: NodeId, alpha: NodeId) -> Result<NodeId> {
        let (tx, ta) = (self.value(x), self.value(alpha));
        if tx.rank() != 2 || ta.rank() != 1 || tx.cols() != ta.numel() {
            return Err(Error::shape("col_scale", tx.shape(), ta.shape()));
        }
        let (r, c) = (tx.rows(), tx.cols());
        let mut data = vec![0.0; r * c];
        for row in 0..r {
            for j in 0..c {
                data[row * c + j] = tx.data()[row * c + j] * ta.data()[j];
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        Ok(self.push(Op::ColScale, vec![x, alpha], value))
    }

    /// Add the vector `v` to every column of `x`.
    pub fn add_col_vec(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (tx, tv) = (self.value(x), self.value(v));
        if tx.rank() != 2 || tv.rank() != 1 || tx.rows() != tv.numel() {
            return Err(Error::shape("add_col_vec", tx.shape(), tv.shape()));
        }
        let (r, c) = (tx.rows(), tx.cols());
        let mut data = vec![0.0; r * c];
        for row in 0..r {
            for j in 0..c {
                data[row * c + j] = tx.data()[row * c + j] + tv.data()[row];
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        Ok(self.push(Op::AddColVec, vec![x, v], value))
    }

    /// Stack matrices vertically; all parts must share the column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows of zero parts".to_string()));
        }
        let cols = self.value(parts[0]).cols();
        let mut part_rows = Vec::with_capacity(parts.len());
        let mut total_rows = 0usize;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    self.value(parts[0]).shape(),
                    t.shape(),
                ));
            }
            part_rows.push(t.rows());
            total_rows += t.rows();
        }
        let mut data = Vec::with_capacity(total_rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(total_rows, cols, data)?;
        Ok(self.push(Op::ConcatRows { part_rows }, parts.to_vec(), value))
    }

    /// Concatenate vectors end to end.
    pub fn concat_vec(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat_vec of zero parts".to_string()));
        }
        let mut part_lens = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 1 {
                return Err(Error::contract(format!(
                    "concat_vec expects vectors, got shape {:?}",
                    t.shape()
                )));
            }
            part_lens.push(t.numel());
            data.extend_from_slice(t.data());
        }
        Ok(self.push(
            Op::ConcatVec { part_lens },
            parts.to_vec(),
            Tensor::vector(data),
        ))
    }

    /// Columns `start..start+len` of `x`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() != 2 || start + len > t.cols() {
            return Err(Error::contract(format!(
                "slice_cols: range {}..{} out of bounds for shape {:?}",
                start,
                start + len,
                t.shape()
            )));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut data = vec![0.0; r * len];
        for row in 0..r {
            data[row * len..(row + 1) * len]
                .copy_from_slice(&t.data()[row * c + start..row * c + start + len]);
        }
        let value = Tensor::matrix(r, len, data)?;
        Ok(self.push(Op::SliceCols { start }, vec![x], value))
    }

    // ── Reductions / losses ──────────────────────────────────────────

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum, vec![x], Tensor::scalar(s))
    }

    /// Binary cross-entropy of a scalar probability against a 0/1 label.
    /// The probability is clipped to `[1e-12, 1 - 1e-12]` first.
    pub fn binary_cross_entropy(&mut self, prob: NodeId, label: f64) -> Result<NodeId> {
        let t = self.value(prob);
        if !t.is_scalar() {
            return Err(Error::contract(format!(
                "binary_cross_entropy expects a scalar probability, got shape {:?}",
                t.shape()
            )));
        }
        let p = t.item().clamp(BCE_CLIP, 1.0 - BCE_CLIP);
        let loss = -label * p.ln() - (1.0 - label) * (1.0 - p).ln();
        Ok(self.push(
            Op::BinaryCrossEntropy { label },
            vec![prob],
            Tensor::scalar(loss),
        ))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from `root` (must be scalar). Gradients are stored on
    /// every node reached by the sweep; earlier gradients are discarded.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.accumulate_inputs(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            debug_assert!(grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|x| x.is_finite())));
            node.value.set_grad(grad);
        }
        Ok(())
    }

    /// Apply the chain rule for node `idx`, adding contributions into the
    /// gradient buffers of its inputs.
    fn accumulate_inputs(&self, idx: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let input = |k: usize| &self.nodes[node.inputs[k].0].value;
        let mut acc = |k: usize, f: &mut dyn FnMut(&mut [f64])| {
            let target = node.inputs[k].0;
            let buf = grads[target]
                .get_or_insert_with(|| vec![0.0; self.nodes[target].value.numel()]);
            f(buf);
        };

        match &node.op {
            Op::Leaf => {}

            Op::Matmul => {
                let (a, b) = (input(0), input(1));
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                acc(0, &mut |ga| gemm_nt(gout, b.data(), ga, m, n, k));
                acc(1, &mut |gb| gemm_tn(a.data(), gout, gb, m, k, n));
            }

            Op::Add => {
                acc(0, &mut |g| axpy(1.0, gout, g));
                acc(1, &mut |g| axpy(1.0, gout, g));
            }

            Op::Mul => {
                let (a, b) = (input(0), input(1));
                acc(0, &mut |g| {
                    for ((gi, go), bv) in g.iter_mut().zip(gout).zip(b.data()) {
                        *gi += go * bv;
                    }
                });
                acc(1, &mut |g| {
                    for ((gi, go), av) in g.iter_mut().zip(gout).zip(a.data()) {
                        *gi += go * av;
                    }
                });
            }

            Op::Tanh => {
                let y = node.value.data();
                acc(0, &mut |g| {
                    for ((gi, go), yv) in g.iter_mut().zip(gout).zip(y) {
                        *gi += go * (1.0 - yv * yv);
                    }
                });
            }

            Op::Sigmoid => {
                let y = node.value.data();
                acc(0, &mut |g| {
                    for ((gi, go), yv) in g.iter_mut().zip(gout).zip(y) {
                        *gi += go * yv * (1.0 - yv);
                    }
                });
            }

            Op::Scale(c) => {
                acc(0, &mut |g| axpy(*c, gout, g));
            }

            Op::AddScalar(_) => {
                acc(0, &mut |g| axpy(1.0, gout, g));
            }

            Op::Clamp { lo, hi } => {
                let x = input(0).data();
                acc(0, &mut |g| {
                    for ((gi, go), xv) in g.iter_mut().zip(gout).zip(x) {
                        if *lo < *xv && *xv < *hi {
                            *gi += go;
                        }
                    }
                });
            }

            Op::Recip => {
                let y = node.value.data();
                acc(0, &mut |g| {
                    for ((gi, go), yv) in g.iter_mut().zip(gout).zip(y) {
                        *gi -= go * yv * yv;
                    }
                });
            }

            Op::MaskedSoftmax { mask } => {
                let y = node.value.data();
                let cols = mask.len();
                let rows = y.len() / cols;
                acc(0, &mut |g| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &gout[r * cols..(r + 1) * cols];
                        let dot: f64 = (0..cols)
                            .filter(|&j| mask[j])
                            .map(|j| gr[j] * yr[j])
                            .sum();
                        for j in 0..cols {
                            if mask[j] {
                                g[r * cols + j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                });
            }

            Op::MaxPoolRows { argmax } => {
                let cols = input(0).cols();
                acc(0, &mut |g| {
                    for (r, &j) in argmax.iter().enumerate() {
                        g[r * cols + j] += gout[r];
                    }
                });
            }

            Op::Cosine => {
                let (u, v) = (input(0), input(1));
                let (y, nu, nv) = cosine_pair(u.data(), v.data());
                if nu >= COSINE_NORM_EPS && nv >= COSINE_NORM_EPS {
                    let go = gout[0];
                    acc(0, &mut |g| {
                        for ((gi, &uv), &vv) in g.iter_mut().zip(u.data()).zip(v.data()) {
                            *gi += go * (vv / (nu * nv) - y * uv / (nu * nu));
                        }
                    });
                    acc(1, &mut |g| {
                        for ((gi, &vv), &uv) in g.iter_mut().zip(v.data()).zip(u.data()) {
                            *gi += go * (uv / (nu * nv) - y * vv / (nv * nv));
                        }
                    });
                }
            }

            Op::CosineColumns { a_mask, b_mask } => {
                let (a, b) = (input(0), input(1));
                let (d, na, nb) = (a.rows(), a.cols(), b.cols());
                let norms_a = column_norms(a.data(), d, na);
                let norms_b = column_norms(b.data(), d, nb);
                let y = node.value.data();
                for k in 0..2 {
                    acc(k, &mut |g| {
                        for i in 0..na {
                            if !a_mask[i] || norms_a[i] < COSINE_NORM_EPS {
                                continue;
                            }
                            for j in 0..nb {
                                if !b_mask[j] || norms_b[j] < COSINE_NORM_EPS {
                                    continue;
                                }
                                let go = gout[i * nb + j];
                                if go == 0.0 {
                                    continue;
                                }
                                let yij = y[i * nb + j];
                                let denom = norms_a[i] * norms_b[j];
                                for r in 0..d {
                                    let av = a.data()[r * na + i];
                                    let bv = b.data()[r * nb + j];
                                    if k == 0 {
                                        g[r * na + i] +=
                                            go * (bv / denom - yij * av / (norms_a[i] * norms_a[i]));
                                    } else {
                                        g[r * nb + j] +=
                                            go * (av / denom - yij * bv / (norms_b[j] * norms_b[j]));
                                    }
                                }
                            }
                        }
                    });
                }
            }

            Op::GatherCols { indices } => {
                let d = node.value.rows();
                let n = node.value.cols();
                let table_cols = input(0).cols();
                acc(0, &mut |g| {
                    for (j, idx) in indices.iter().enumerate() {
                        if let Some(i) = idx {
                            for r in 0..d {
                                g[i * table_cols + r] += gout[r * n + j];
                            }
                        }
                    }
                });
            }

            Op::ShiftCols { offset } => {
                let (r, c) = (node.value.rows(), node.value.cols());
                acc(0, &mut |g| {
                    for j in 0..c {
                        let src = j as isize - offset;
                        if (0..c as isize).contains(&src) {
                            let src = src as usize;
                            for row in 0..r {
                                g[row * c + src] += gout[row * c + j];
                            }
                        }
                    }
                });
            }

            Op::ColScale => {
                let (x, alpha) = (input(0), input(1));
                let (r, c) = (x.rows(), x.cols());
                acc(0, &mut |g| {
                    for row in 0..r {
                        for j in 0..c {
                            g[row * c + j] += gout[row * c + j] * alpha.data()[j];
                        }
                    }
                });
                acc(1, &mut |g| {
                    for row in 0..r {
                        for j in 0..c {
                            g[j] += gout[row * c + j] * x.data()[row * c + j];
                        }
                    }
                });
            }

            Op::AddColVec => {
                let (r, c) = (node.value.rows(), node.value.cols());
                acc(0, &mut |g| axpy(1.0, gout, g));
                acc(1, &mut |g| {
                    for row in 0..r {
                        for j in 0..c {
                            g[row] += gout[row * c + j];
                        }
                    }
                });
            }

            Op::ConcatRows { part_rows } => {
                let cols = node.value.cols();
                let mut offset = 0usize;
                for (k, &pr) in part_rows.iter().enumerate() {
                    let chunk = &gout[offset * cols..(offset + pr) * cols];
                    acc(k, &mut |g| axpy(1.0, chunk, g));
                    offset += pr;
                }
            }

            Op::ConcatVec { part_lens } => {
                let mut offset = 0usize;
                for (k, &len) in part_lens.iter().enumerate() {
                    let chunk = &gout[offset..offset + len];
                    acc(k, &mut |g| axpy(1.0, chunk, g));
                    offset += len;
                }
            }

            Op::SliceCols { start } => {
                let len = node.value.cols();
                let (r, c) = (input(0).rows(), input(0).cols());
                acc(0, &mut |g| {
                    for row in 0..r {
                        for j in 0..len {
                            g[row * c + start + j] += gout[row * len + j];
                        }
                    }
                });
            }

            Op::Transpose => {
                let (r, c) = (input(0).rows(), input(0).cols());
                acc(0, &mut |g| {
                    // gout has shape [c, r]
                    for i in 0..c {
                        for j in 0..r {
                            g[j * c + i] += gout[i * r + j];
                        }
                    }
                });
            }

            Op::Dot => {
                let (a, b) = (input(0), input(1));
                let go = gout[0];
                acc(0, &mut |g| axpy(go, b.data(), g));
                acc(1, &mut |g| axpy(go, a.data(), g));
            }

            Op::Sum => {
                let go = gout[0];
                acc(0, &mut |g| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
            }

            Op::BinaryCrossEntropy { label } => {
                let p = input(0).item();
                if BCE_CLIP < p && p < 1.0 - BCE_CLIP {
                    let go = gout[0];
                    acc(0, &mut |g| {
                        g[0] += go * (-label / p + (1.0 - label) / (1.0 - p));
                    });
                }
            }
        }
    }
}

// ── Kernels ──────────────────────────────────────────────────────────

/// `c += a * b` for row-major `a: [m,k]`, `b: [k,n]`, `c: [m,n]`.
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// `c += a * b^T` for `a: [m,k]`, `b: [n,k]`, `c: [m,n]`.
fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            *cv += s;
        }
    }
}

/// `c += a^T * b` for `a: [k,m]`, `b: [k,n]`, `c: [m,n]`.
fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let crow = &mut c[i * n..(i + 1) * n];
                for j in 0..n {
                    crow[j] += av * brow[j];
                }
            }
        }
    }
}

fn transpose_into(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Treat a vector as a one-row matrix; matrices pass through.
fn row_major_view(t: &Tensor) -> Result<(usize, usize)> {
    match t.rank() {
        1 => Ok((1, t.numel())),
        2 => Ok((t.rows(), t.cols())),
        _ => Err(Error::contract(format!(
            "expected vector or matrix, got shape {:?}",
            t.shape()
        ))),
    }
}

fn softmax_row(row: &[f64], mask: &[bool], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if mask[j] && v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for j in 0..row.len() {
        if mask[j] {
            let e = (row[j] - max).exp();
            out[j] = e;
            sum += e;
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        if mask[j] {
            *o /= sum;
        }
    }
}

fn cosine_pair(u: &[f64], v: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let nu = nu.sqrt();
    let nv = nv.sqrt();
    if nu < COSINE_NORM_EPS || nv < COSINE_NORM_EPS {
        (0.0, nu, nv)
    } else {
        (dot / (nu * nv), nu, nv)
    }
}

fn column_norms(data: &[f64], d: usize, n: usize) -> Vec<f64> {
    let mut norms = vec![0.0; n];
    for r in 0..d {
        for j in 0..n {
            let v = data[r * n + j];
            norms[j] += v * v;
        }
    }
    for norm in norms.iter_mut() {
        *norm = norm.sqrt();
    }
    norms
}

fn column_dot(a: &[f64], b: &[f64], d: usize, na: usize, nb: usize, i: usize, j: usize) -> f64 {
    let mut s = 0.0;
    for r in 0..d {
        s += a[r * na + i] * b[r * nb + j];
    }
    s
}
