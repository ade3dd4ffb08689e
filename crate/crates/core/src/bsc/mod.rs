//! Feature-level correlation between the two modalities.
//!
//! Both feature sequences are reconstructed by one shared attention block
//! that uses a learnable dictionary of modality-shared atoms as keys and
//! values. Original and reconstructed sequences are mean-pooled and passed
//! through one shared linear map, then compared:
//!
//! ```text
//! s_T = f_T − f̂_T,  s_V = f_V − f̂_V
//! inconsistency = [s_T; s_T − s_V; s_V]
//! consistency   = [f̂_T; f̂_T ⊙ f̂_V; f̂_V]
//! ```

use rand::Rng;
use thiserror::Error;

use crate::nn::{glorot_uniform, AttentionLayer, Graph, KernelError, NodeId, ParamId, ParamStore, Tensor};

pub const GROUP_DICTIONARY: &str = "dictionary";
pub const GROUP_ATTENTION: &str = "attention";
pub const GROUP_AGGREGATION: &str = "aggregation";
pub const GROUP_ALIGN_FALLBACK: &str = "align_fallback";

#[derive(Debug, Error, PartialEq)]
pub enum BscError {
    #[error("feature width {found} does not match model width {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot aggregate an empty sequence")]
    EmptySequence,
    #[error("dictionary needs at least one atom")]
    EmptyDictionary,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// `M` learnable atoms of width `d`, stored as one `[M, d]` parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointDictionary {
    pub atoms: ParamId,
    pub size: usize,
    pub width: usize,
}

/// Graph handles of one forward pass through the module.
#[derive(Debug, Clone, Copy)]
pub struct BscOutput {
    /// `[1, 3d]`
    pub inconsistency: NodeId,
    /// `[1, 3d]`
    pub consistency: NodeId,
    /// Pooled reconstructed text feature, `[1, d]`.
    pub text_hat: NodeId,
    /// Pooled reconstructed visual feature, `[1, d]`.
    pub visual_hat: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BscOptions {
    /// Replace dictionary attention with a shared linear layer.
    pub disable_align: bool,
    /// Load parameters as constants.
    pub frozen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasicCorrelation {
    pub dictionary: JointDictionary,
    pub layer: AttentionLayer,
    pub agg_weight: ParamId,
    pub agg_bias: ParamId,
    pub fallback_weight: ParamId,
    pub fallback_bias: ParamId,
}

impl BasicCorrelation {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        width: usize,
        atoms: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, BscError> {
        if atoms == 0 {
            return Err(BscError::EmptyDictionary);
        }
        let dictionary = JointDictionary {
            atoms: store.add(GROUP_DICTIONARY, "dictionary.atoms", glorot_uniform(atoms, width, rng)),
            size: atoms,
            width,
        };
        let layer = AttentionLayer::new(store, GROUP_ATTENTION, width, heads, rng)?;
        let zeros = || Tensor::zeros(vec![1, width]).expect("positive width");
        let agg_weight = store.add(GROUP_AGGREGATION, "aggregation.weight", glorot_uniform(width, width, rng));
        let agg_bias = store.add(GROUP_AGGREGATION, "aggregation.bias", zeros());
        let fallback_weight = store.add(
            GROUP_ALIGN_FALLBACK,
            "align_fallback.weight",
            glorot_uniform(width, width, rng),
        );
        let fallback_bias = store.add(GROUP_ALIGN_FALLBACK, "align_fallback.bias", zeros());
        Ok(Self {
            dictionary,
            layer,
            agg_weight,
            agg_bias,
            fallback_weight,
            fallback_bias,
        })
    }

    pub fn width(&self) -> usize {
        self.dictionary.width
    }

    fn load(g: &mut Graph, store: &ParamStore, id: ParamId, frozen: bool) -> Result<NodeId, KernelError> {
        if frozen {
            g.frozen_param(store, id)
        } else {
            g.param(store, id)
        }
    }

    fn check_width(&self, g: &Graph, seq: NodeId) -> Result<(), BscError> {
        let (_, w) = g.value(seq).dims2()?;
        if w != self.width() {
            return Err(BscError::DimensionMismatch {
                expected: self.width(),
                found: w,
            });
        }
        Ok(())
    }

    /// Reconstructs a `[n, d]` sequence with the dictionary as key and value.
    pub fn align(&self, g: &mut Graph, store: &ParamStore, features: NodeId, opts: BscOptions) -> Result<NodeId, BscError> {
        self.check_width(g, features)?;
        if opts.disable_align {
            let w = Self::load(g, store, self.fallback_weight, opts.frozen)?;
            let b = Self::load(g, store, self.fallback_bias, opts.frozen)?;
            return Ok(g.linear(features, w, b)?);
        }
        let atoms = Self::load(g, store, self.dictionary.atoms, opts.frozen)?;
        let out = self.layer.forward(g, store, features, atoms, atoms, !opts.frozen)?;
        Ok(out.output)
    }

    /// Mean over positions followed by the shared linear map: `[n, d] -> [1, d]`.
    pub fn aggregate(&self, g: &mut Graph, store: &ParamStore, seq: NodeId, opts: BscOptions) -> Result<NodeId, BscError> {
        self.check_width(g, seq)?;
        let pooled = g.mean_rows(seq)?;
        let w = Self::load(g, store, self.agg_weight, opts.frozen)?;
        let b = Self::load(g, store, self.agg_bias, opts.frozen)?;
        Ok(g.linear(pooled, w, b)?)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        text: NodeId,
        visual: NodeId,
        opts: BscOptions,
    ) -> Result<BscOutput, BscError> {
        let text_rec = self.align(g, store, text, opts)?;
        let visual_rec = self.align(g, store, visual, opts)?;
        let text_agg = self.aggregate(g, store, text, opts)?;
        let text_hat = self.aggregate(g, store, text_rec, opts)?;
        let visual_agg = self.aggregate(g, store, visual, opts)?;
        let visual_hat = self.aggregate(g, store, visual_rec, opts)?;
        let (inconsistency, consistency) = fuse(g, text_agg, text_hat, visual_agg, visual_hat)?;
        Ok(BscOutput {
            inconsistency,
            consistency,
            text_hat,
            visual_hat,
        })
    }
}

/// Compare/aggregate fusion of the four pooled `[1, d]` features.
pub fn fuse(
    g: &mut Graph,
    text_agg: NodeId,
    text_hat: NodeId,
    visual_agg: NodeId,
    visual_hat: NodeId,
) -> Result<(NodeId, NodeId), BscError> {
    let widths: Vec<usize> = [text_agg, text_hat, visual_agg, visual_hat]
        .iter()
        .map(|n| g.value(*n).dims2().map(|(_, w)| w))
        .collect::<Result<_, _>>()?;
    if let Some(bad) = widths.iter().find(|w| **w != widths[0]) {
        return Err(BscError::DimensionMismatch {
            expected: widths[0],
            found: *bad,
        });
    }
    let sem_t = g.sub(text_agg, text_hat)?;
    let sem_v = g.sub(visual_agg, visual_hat)?;
    let diff = g.sub(sem_t, sem_v)?;
    let inconsistency = g.concat_cols(&[sem_t, diff, sem_v])?;
    let joint = g.mul(text_hat, visual_hat)?;
    let consistency = g.concat_cols(&[text_hat, joint, visual_hat])?;
    Ok((inconsistency, consistency))
}

/// [`fuse`] on plain vectors.
pub fn fuse_values(
    text_agg: &[f64],
    text_hat: &[f64],
    visual_agg: &[f64],
    visual_hat: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), BscError> {
    let d = text_agg.len();
    for v in [text_hat, visual_agg, visual_hat] {
        if v.len() != d {
            return Err(BscError::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    let sem_t: Vec<f64> = text_agg.iter().zip(text_hat).map(|(a, b)| a - b).collect();
    let sem_v: Vec<f64> = visual_agg.iter().zip(visual_hat).map(|(a, b)| a - b).collect();
    let mut inc = sem_t.clone();
    inc.extend(sem_t.iter().zip(&sem_v).map(|(a, b)| a - b));
    inc.extend_from_slice(&sem_v);
    let mut con = text_hat.to_vec();
    con.extend(text_hat.iter().zip(visual_hat).map(|(a, b)| a * b));
    con.extend_from_slice(visual_hat);
    Ok((inc, con))
}

/// Mean over rows, then `weightᵀ · mean + bias`, on plain values.
pub fn aggregate_values(rows: &[Vec<f64>], weight: &Tensor, bias: &Tensor) -> Result<Vec<f64>, BscError> {
    let first = rows.first().ok_or(BscError::EmptySequence)?;
    let d = first.len();
    let (wr, wc) = weight.dims2()?;
    if wr != d {
        return Err(BscError::DimensionMismatch { expected: wr, found: d });
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        if r.len() != d {
            return Err(BscError::DimensionMismatch {
                expected: d,
                found: r.len(),
            });
        }
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / rows.len() as f64);
    }
    let mut out = crate::nn::matmul(&mean, weight.data(), 1, d, wc);
    out.iter_mut().zip(bias.data()).for_each(|(o, b)| *o += b);
    Ok(out)
}
