//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.

use super::linalg::{gemm, View};
use super::params::{Gradients, ParamId, ParamStore};
use super::{check_label, KernelError, Tensor, PROB_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Adds a `[1, c]` row to every row of `a`.
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MulConst(NodeId, Vec<f64>),
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    MeanRows(NodeId),
    Sum(NodeId),
    /// `a / s` for a `[1, 1]` node `s`.
    DivScalar(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    Bce {
        prob: NodeId,
        label: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation record for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    t.dims2().expect("graph tensors are rank two")
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> KernelError {
    KernelError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Option<f64> {
        self.value(id).item()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<NodeId, KernelError> {
        if !value.is_finite() {
            return Err(KernelError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Records a non-trainable input. Rank-one tensors become `[1, n]` rows.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId, KernelError> {
        let value = as_rank2(value)?;
        self.push(value, Op::Constant, false, "constant")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId, KernelError> {
        let value = as_rank2(store.get(id).clone())?;
        self.push(value, Op::Param(id), true, "param")
    }

    /// Records a parameter as a constant, so it receives no gradient.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId, KernelError> {
        self.constant(store.get(id).clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (dims(ta), dims(tb));
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, View::normal(ta.data(), k), View::normal(tb.data(), n), 0.0, &mut out);
        let t = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::MatMul(a, b), rg, "matmul")
    }

    /// `a · bᵀ` with `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (n, k2)) = (dims(ta), dims(tb));
        if k != k2 {
            return Err(mismatch("matmul_nt", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, View::normal(ta.data(), k), View::transposed(tb.data(), k), 0.0, &mut out);
        let t = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::MatMulNT(a, b), rg, "matmul_nt")
    }

    fn zip_same(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, KernelError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(t, op, rg, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, KernelError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let ((r, c), (one, c2)) = (dims(ta), dims(tr));
        if one != 1 || c != c2 {
            return Err(mismatch("add_row", ta, tr));
        }
        let bias = tr.data();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(c) {
            chunk.iter_mut().zip(bias).for_each(|(x, b)| *x += b);
        }
        let t = Tensor::matrix(r, c, data)?;
        let rg = self.rg(&[a, row]);
        self.push(t, Op::AddRow(a, row), rg, "add_row")
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, KernelError> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, factor), rg, "scale")
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, KernelError> {
        self.scale(a, -1.0)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: NodeId, c: Vec<f64>) -> Result<NodeId, KernelError> {
        let ta = self.value(a);
        if ta.len() != c.len() {
            return Err(KernelError::ShapeMismatch {
                op: "mul_const",
                left: ta.shape().to_vec(),
                right: vec![c.len()],
            });
        }
        let data = ta.data().iter().zip(&c).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::MulConst(a, c), rg, "mul_const")
    }

    fn map(&mut self, a: NodeId, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId, KernelError> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push(t, op, rg, name)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, KernelError> {
        self.map(a, "relu", |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, KernelError> {
        self.map(a, "sigmoid", super::sigmoid, Op::Sigmoid(a))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, KernelError> {
        let ta = self.value(a);
        let (r, c) = dims(ta);
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let t = Tensor::matrix(r, c, data)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::SoftmaxRows(a), rg, "softmax")
    }

    /// Row-wise layer normalisation with elementwise `gain` and `bias` rows.
    pub fn layer_norm_rows(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId, KernelError> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (r, c) = dims(tx);
        if dims(tg) != (1, c) {
            return Err(mismatch("layer_norm", tx, tg));
        }
        if dims(tb) != (1, c) {
            return Err(mismatch("layer_norm", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c) {
            let (mean, inv_std) = row_stats(row, eps);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv_std * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::matrix(r, c, data)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(t, Op::LayerNormRows { x, gain, bias, eps }, rg, "layer_norm")
    }

    /// Mean over rows: `[n, c] -> [1, c]`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId, KernelError> {
        let ta = self.value(a);
        let (r, c) = dims(ta);
        let mut out = vec![0.0; c];
        for row in ta.data().chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let t = Tensor::row(out)?;
        let rg = self.rg(&[a]);
        self.push(t, Op::MeanRows(a), rg, "mean_rows")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, KernelError> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    pub fn div_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, KernelError> {
        let (ta, ts) = (self.value(a), self.value(s));
        let Some(denom) = ts.item() else {
            return Err(mismatch("div_scalar", ta, ts));
        };
        let data = ta.data().iter().map(|x| x / denom).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, s]);
        self.push(t, Op::DivScalar(a, s), rg, "div_scalar")
    }

    /// Concatenates along columns; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, KernelError> {
        let first = parts.first().ok_or(KernelError::InvalidShape(vec![0]))?;
        let rows = dims(self.value(*first)).0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = dims(self.value(*p));
            if r != rows {
                return Err(mismatch("concat_cols", self.value(*first), self.value(*p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let t = Tensor::matrix(rows, total, data)?;
        let rg = self.rg(parts);
        self.push(t, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, KernelError> {
        let tx = self.value(x);
        let (r, c) = dims(tx);
        if len == 0 || start + len > c {
            return Err(KernelError::SliceOutOfRange {
                start,
                end: start + len,
                cols: c,
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for row in tx.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let t = Tensor::matrix(r, len, data)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::SliceCols { x, start }, rg, "slice_cols")
    }

    /// Binary cross-entropy of a `[1, 1]` probability node against a 0/1 label.
    pub fn bce(&mut self, prob: NodeId, label: f64) -> Result<NodeId, KernelError> {
        check_label(label)?;
        let tp = self.value(prob);
        let Some(p) = tp.item() else {
            return Err(KernelError::NonScalarLoss(tp.shape().to_vec()));
        };
        let loss = super::bce_loss(p, label)?;
        let rg = self.rg(&[prob]);
        self.push(Tensor::scalar(loss), Op::Bce { prob, label }, rg, "bce")
    }

    /// Reverse sweep from a scalar `loss`. Parameters the loss does not reach
    /// get zero gradient.
    pub fn backward(&self, loss: NodeId, store: &ParamStore) -> Result<Gradients, KernelError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(KernelError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(store);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) -> Result<(), KernelError> {
        let mut send = |id: NodeId, delta: Vec<f64>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Constant => {}
            Op::Param(pid) => {
                if out.get(*pid).len() != g.len() {
                    return Err(KernelError::GradientLayout);
                }
                out.accumulate(*pid, g);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ((m, k), (_, n)) = (dims(ta), dims(tb));
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, View::normal(g, n), View::transposed(tb.data(), n), 0.0, &mut da);
                    send(*a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, View::transposed(ta.data(), k), View::normal(g, n), 0.0, &mut db);
                    send(*b, db);
                }
            }
            Op::MatMulNT(a, b) => {
                // c = a bᵀ: da = g b, db = gᵀ a
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ((m, k), (n, _)) = (dims(ta), dims(tb));
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, View::normal(g, n), View::normal(tb.data(), k), 0.0, &mut da);
                    send(*a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm(n, m, k, View::transposed(g, n), View::normal(ta.data(), k), 0.0, &mut db);
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                send(*a, g.iter().zip(tb.data()).map(|(x, y)| x * y).collect());
                send(*b, g.iter().zip(ta.data()).map(|(x, y)| x * y).collect());
            }
            Op::AddRow(a, row) => {
                send(*a, g.to_vec());
                if self.requires_grad(*row) {
                    let c = self.value(*row).len();
                    let mut dr = vec![0.0; c];
                    for chunk in g.chunks(c) {
                        dr.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                    }
                    send(*row, dr);
                }
            }
            Op::Scale(a, f) => send(*a, g.iter().map(|v| v * f).collect()),
            Op::MulConst(a, c) => send(*a, g.iter().zip(c).map(|(x, y)| x * y).collect()),
            Op::Relu(a) => {
                let ta = self.value(*a);
                send(
                    *a,
                    g.iter()
                        .zip(ta.data())
                        .map(|(d, x)| if *x > 0.0 { *d } else { 0.0 })
                        .collect(),
                );
            }
            Op::Sigmoid(a) => {
                let s = node.value.data();
                send(*a, g.iter().zip(s).map(|(d, s)| d * s * (1.0 - s)).collect());
            }
            Op::SoftmaxRows(a) => {
                let (_, c) = dims(&node.value);
                let mut da = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(node.value.data().chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(d, y)| d * y).sum();
                    da.extend(gr.iter().zip(yr).map(|(d, y)| y * (d - dot)));
                }
                send(*a, da);
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let tx = self.value(*x);
                let gain_v = self.value(*gain).data();
                let (_, c) = dims(tx);
                let mut dx = Vec::with_capacity(g.len());
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for (gr, xr) in g.chunks(c).zip(tx.data().chunks(c)) {
                    let (mean, inv_std) = row_stats(xr, *eps);
                    let xhat: Vec<f64> = xr.iter().map(|v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f64> = gr.iter().zip(gain_v).map(|(d, w)| d * w).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / c as f64;
                    let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx.push(inv_std * (dxhat[j] - mean_d - xhat[j] * mean_dx));
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                }
                send(*x, dx);
                send(*gain, dgain);
                send(*bias, dbias);
            }
            Op::MeanRows(a) => {
                let (r, c) = dims(self.value(*a));
                let mut da = Vec::with_capacity(r * c);
                for _ in 0..r {
                    da.extend(g.iter().map(|v| v / r as f64));
                }
                send(*a, da);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                send(*a, vec![g[0]; n]);
            }
            Op::DivScalar(a, s) => {
                let ta = self.value(*a);
                let denom = self.value(*s).data()[0];
                send(*a, g.iter().map(|v| v / denom).collect());
                let ds = -g.iter().zip(ta.data()).map(|(d, x)| d * x).sum::<f64>() / (denom * denom);
                send(*s, vec![ds]);
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = dims(&node.value);
                let mut offset = 0;
                for p in parts {
                    let w = dims(self.value(*p)).1;
                    if self.requires_grad(*p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        send(*p, dp);
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = dims(self.value(*x));
                let len = dims(&node.value).1;
                let mut dx = vec![0.0; r * c];
                for row in 0..r {
                    dx[row * c + start..row * c + start + len].copy_from_slice(&g[row * len..(row + 1) * len]);
                }
                send(*x, dx);
            }
            Op::Bce { prob, label } => {
                let p = self.value(*prob).data()[0].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                let dp = -label / p + (1.0 - label) / (1.0 - p);
                send(*prob, vec![g[0] * dp]);
            }
        }
        Ok(())
    }
}

fn as_rank2(t: Tensor) -> Result<Tensor, KernelError> {
    let (r, c) = t.dims2()?;
    if t.shape().len() == 2 {
        Ok(t)
    } else {
        Tensor::matrix(r, c, t.into_data())
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
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
