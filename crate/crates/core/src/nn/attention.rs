//! Multi-head scaled dot-product attention block with post-norm residual
//! wiring and a position-wise feed-forward network:
//!
//! ```text
//! a   = Concat_h(softmax(Q_h K_hᵀ / √d_h) V_h) · W_o + b_o
//! x1  = LN(query + a)
//! out = LN(x1 + W_2 · relu(W_1 · x1 + b_1) + b_2)
//! ```
//!
//! With `residual` off the layer norms are skipped too; with `feed_forward`
//! off the second block is skipped entirely.

use rand::Rng;

use super::{glorot_uniform, Graph, KernelError, NodeId, ParamId, ParamStore, Tensor};

const LN_EPS: f64 = 1e-5;
pub const FFN_EXPANSION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionLayer {
    pub params: AttentionParams,
    pub width: usize,
    pub heads: usize,
    pub residual: bool,
    pub feed_forward: bool,
}

/// Node handles produced by one [`AttentionLayer::forward`] call.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: NodeId,
    /// Concatenated head outputs before the output projection.
    pub context: NodeId,
    /// One `[n, m]` weight matrix per head.
    pub weights: Vec<NodeId>,
}

impl AttentionLayer {
    /// Registers a fresh layer under `group`. Weights are Glorot-uniform,
    /// biases zero, layer-norm gains one.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        group: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, KernelError> {
        if heads == 0 || width % heads != 0 {
            return Err(KernelError::HeadMismatch { width, heads });
        }
        let hidden = width * FFN_EXPANSION;
        let mut w = |name: &str, rows: usize, cols: usize, rng: &mut R| {
            store.add(group, &format!("{group}.{name}"), glorot_uniform(rows, cols, rng))
        };
        let wq = w("wq", width, width, rng);
        let wk = w("wk", width, width, rng);
        let wv = w("wv", width, width, rng);
        let wo = w("wo", width, width, rng);
        let w1 = w("ffn.w1", width, hidden, rng);
        let w2 = w("ffn.w2", hidden, width, rng);
        let mut row = |name: &str, n: usize, value: f64| {
            store.add(group, &format!("{group}.{name}"), Tensor::filled(vec![1, n], value).expect("positive width"))
        };
        let params = AttentionParams {
            wq,
            bq: row("bq", width, 0.0),
            wk,
            bk: row("bk", width, 0.0),
            wv,
            bv: row("bv", width, 0.0),
            wo,
            bo: row("bo", width, 0.0),
            ln1_gain: row("ln1.gain", width, 1.0),
            ln1_bias: row("ln1.bias", width, 0.0),
            w1,
            b1: row("ffn.b1", hidden, 0.0),
            w2,
            b2: row("ffn.b2", width, 0.0),
            ln2_gain: row("ln2.gain", width, 1.0),
            ln2_bias: row("ln2.bias", width, 0.0),
        };
        Ok(Self {
            params,
            width,
            heads,
            residual: true,
            feed_forward: true,
        })
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        let p = &self.params;
        vec![
            p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo, p.ln1_gain, p.ln1_bias, p.w1, p.b1, p.w2, p.b2,
            p.ln2_gain, p.ln2_bias,
        ]
    }

    /// Convenience wrapper over plain rows; returns the output values.
    pub fn forward_rows(
        &self,
        store: &ParamStore,
        query: &[Vec<f64>],
        keys: &[Vec<f64>],
        values: &[Vec<f64>],
    ) -> Result<Tensor, KernelError> {
        if keys.is_empty() || values.is_empty() {
            return Err(KernelError::EmptyKeys);
        }
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_rows(query)?)?;
        let k = g.constant(Tensor::from_rows(keys)?)?;
        let v = g.constant(Tensor::from_rows(values)?)?;
        let out = self.forward(&mut g, store, q, k, v, false)?;
        Ok(g.value(out.output).clone())
    }

    /// Runs the block. `query: [n, w]`, `key`/`value: [m, w]`, output `[n, w]`.
    ///
    /// With `trainable` false the weights enter the graph as constants.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: NodeId,
        key: NodeId,
        value: NodeId,
        trainable: bool,
    ) -> Result<AttentionOutput, KernelError> {
        let (_, qw) = g.value(query).dims2()?;
        let (m, kw) = g.value(key).dims2()?;
        let (mv, vw) = g.value(value).dims2()?;
        if m == 0 || mv == 0 {
            return Err(KernelError::EmptyKeys);
        }
        for (w, other) in [(qw, g.value(query)), (kw, g.value(key)), (vw, g.value(value))] {
            if w != self.width {
                return Err(KernelError::ShapeMismatch {
                    op: "attention",
                    left: vec![self.width],
                    right: other.shape().to_vec(),
                });
            }
        }
        if m != mv {
            return Err(KernelError::ShapeMismatch {
                op: "attention",
                left: g.value(key).shape().to_vec(),
                right: g.value(value).shape().to_vec(),
            });
        }
        let load = |g: &mut Graph, id: ParamId| {
            if trainable {
                g.param(store, id)
            } else {
                g.frozen_param(store, id)
            }
        };
        let p = self.params;
        let (wq, bq) = (load(g, p.wq)?, load(g, p.bq)?);
        let (wk, bk) = (load(g, p.wk)?, load(g, p.bk)?);
        let (wv, bv) = (load(g, p.wv)?, load(g, p.bv)?);
        let (wo, bo) = (load(g, p.wo)?, load(g, p.bo)?);

        let q = g.linear(query, wq, bq)?;
        let k = g.linear(key, wk, bk)?;
        let v = g.linear(value, wv, bv)?;

        let head_width = self.width / self.heads;
        let scale = 1.0 / (head_width as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * head_width;
            let qh = g.slice_cols(q, start, head_width)?;
            let kh = g.slice_cols(k, start, head_width)?;
            let vh = g.slice_cols(v, start, head_width)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax_rows(scores)?;
            heads.push(g.matmul(attn, vh)?);
            weights.push(attn);
        }
        let context = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        let mut x = g.linear(context, wo, bo)?;

        if self.residual {
            let (gain, bias) = (load(g, p.ln1_gain)?, load(g, p.ln1_bias)?);
            let sum = g.add(query, x)?;
            x = g.layer_norm_rows(sum, gain, bias, LN_EPS)?;
        }
        if self.feed_forward {
            let (w1, b1) = (load(g, p.w1)?, load(g, p.b1)?);
            let (w2, b2) = (load(g, p.w2)?, load(g, p.b2)?);
            let hidden = g.linear(x, w1, b1)?;
            let hidden = g.relu(hidden)?;
            let ff = g.linear(hidden, w2, b2)?;
            if self.residual {
                let (gain, bias) = (load(g, p.ln2_gain)?, load(g, p.ln2_bias)?);
                let sum = g.add(x, ff)?;
                x = g.layer_norm_rows(sum, gain, bias, LN_EPS)?;
            } else {
                x = ff;
            }
        }
        Ok(AttentionOutput {
            output: x,
            context,
            weights,
        })
    }
}
