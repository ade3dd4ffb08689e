//! Knowledge-level correlation between the entities of a post.
//!
//! Entity pairs are formed within and across modalities, scored by the path
//! reasoner, and the `k` closest and `k` farthest pairs are summarised by a
//! positive and a negative distance-reweighted attention.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::kg::EntityId;
use crate::nn::{glorot_uniform, Graph, KernelError, NodeId, ParamId, ParamStore, Tensor};
use crate::paths::PairCorrelation;

pub const GROUP_PROJECTION: &str = "kec_projection";
pub const DEFAULT_TOP_K: usize = 3;
/// Lower bound applied to distances before reweighting.
pub const DISTANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum KecError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{what}: expected width {expected}, found {found}")]
    Width {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{reps} representations but {distances} distances")]
    CountMismatch { reps: usize, distances: usize },
    #[error("attention over an empty subset")]
    Empty,
    #[error("non-finite attention score")]
    NonFiniteScore,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PairKind {
    TT,
    TV,
    VV,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntityPairSet {
    pub kind: PairKind,
    /// Canonical `(smaller, larger)` pairs in ascending order.
    pub pairs: Vec<(EntityId, EntityId)>,
}

impl EntityPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn canonical(a: EntityId, b: EntityId) -> (EntityId, EntityId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Intra-text, cross-modal and intra-visual pair sets, in that order.
///
/// Inputs are expected to be deduplicated. When the two lists share
/// entities, the cross-modal set keeps one copy of every canonical pair, so
/// its size drops below `N_T·N_V`.
pub fn build_pair_sets(text: &[EntityId], visual: &[EntityId]) -> [EntityPairSet; 3] {
    let within = |xs: &[EntityId]| {
        let mut set = BTreeSet::new();
        for (i, a) in xs.iter().enumerate() {
            for b in &xs[i + 1..] {
                if a != b {
                    set.insert(canonical(*a, *b));
                }
            }
        }
        set.into_iter().collect::<Vec<_>>()
    };
    let mut across = BTreeSet::new();
    for t in text {
        for v in visual {
            across.insert(canonical(*t, *v));
        }
    }
    [
        EntityPairSet {
            kind: PairKind::TT,
            pairs: within(text),
        },
        EntityPairSet {
            kind: PairKind::TV,
            pairs: across.into_iter().collect(),
        },
        EntityPairSet {
            kind: PairKind::VV,
            pairs: within(visual),
        },
    ]
}

/// Indices into the scored pair list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopK {
    /// Ascending distance.
    pub relevant: Vec<usize>,
    /// Descending distance.
    pub irrelevant: Vec<usize>,
}

pub fn select_topk(pairs: &[PairCorrelation], k: usize) -> Result<TopK, KecError> {
    if k == 0 {
        return Err(KecError::InvalidK);
    }
    let key = |i: usize| (pairs[i].first, pairs[i].second);
    let mut asc: Vec<usize> = (0..pairs.len()).collect();
    asc.sort_by(|&a, &b| {
        pairs[a]
            .distance
            .partial_cmp(&pairs[b].distance)
            .unwrap_or(Ordering::Equal)
            .then_with(|| key(a).cmp(&key(b)))
    });
    let mut desc: Vec<usize> = (0..pairs.len()).collect();
    desc.sort_by(|&a, &b| {
        pairs[b]
            .distance
            .partial_cmp(&pairs[a].distance)
            .unwrap_or(Ordering::Equal)
            .then_with(|| key(a).cmp(&key(b)))
    });
    asc.truncate(k);
    desc.truncate(k);
    Ok(TopK {
        relevant: asc,
        irrelevant: desc,
    })
}

/// Which of the two signed attentions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Polarity {
    /// Closer pairs dominate: weights ∝ softmax(score) / distance.
    Relevant,
    /// Farther, lower-scoring pairs dominate: weights ∝ softmax(−score) · distance.
    Irrelevant,
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Effective mixing weights for given attention scores and distances.
pub fn effective_weights(scores: &[f64], distances: &[f64], polarity: Polarity) -> Result<Vec<f64>, KecError> {
    if scores.len() != distances.len() {
        return Err(KecError::CountMismatch {
            reps: scores.len(),
            distances: distances.len(),
        });
    }
    if scores.is_empty() {
        return Err(KecError::Empty);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(KecError::NonFiniteScore);
    }
    let d = distances.iter().map(|d| d.max(DISTANCE_FLOOR));
    let u: Vec<f64> = match polarity {
        Polarity::Relevant => softmax(scores).into_iter().zip(d).map(|(l, d)| l / d).collect(),
        Polarity::Irrelevant => {
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            // λ = −softmax(−s); the sign cancels in the normalisation below
            let lambda: Vec<f64> = softmax(&neg).into_iter().map(|x| -x).collect();
            lambda.into_iter().zip(d).map(|(l, d)| l * d).collect()
        }
    };
    let total: f64 = u.iter().sum();
    Ok(u.into_iter().map(|x| x / total).collect())
}

/// Plain-value signed attention: `Σ w_i rep_i`.
pub fn signed_attention(
    query: &[f64],
    reps: &[Vec<f64>],
    distances: &[f64],
    polarity: Polarity,
) -> Result<Vec<f64>, KecError> {
    let width = query.len();
    for r in reps {
        if r.len() != width {
            return Err(KecError::Width {
                what: "pair representation",
                expected: width,
                found: r.len(),
            });
        }
    }
    let scale = 1.0 / (width as f64).sqrt();
    let scores: Vec<f64> = reps
        .iter()
        .map(|r| r.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();
    let w = effective_weights(&scores, distances, polarity)?;
    let mut out = vec![0.0; width];
    for (wi, r) in w.iter().zip(reps) {
        out.iter_mut().zip(r).for_each(|(o, x)| *o += wi * x);
    }
    Ok(out)
}

/// Graph handles of one signed attention.
#[derive(Debug, Clone, Copy)]
pub struct SignedAttentionNodes {
    /// `[1, w]`
    pub output: NodeId,
    /// Raw coefficients λ, `[1, k]`.
    pub lambda: NodeId,
    /// Effective weights, `[1, k]`.
    pub weights: NodeId,
}

/// Signed attention on the tape; `reps` is `[k, w]` and serves as keys and values.
pub fn signed_attention_node(
    g: &mut Graph,
    query: NodeId,
    reps: NodeId,
    distances: &[f64],
    polarity: Polarity,
) -> Result<SignedAttentionNodes, KecError> {
    let (_, width) = g.value(query).dims2()?;
    let (k, rep_width) = g.value(reps).dims2()?;
    if rep_width != width {
        return Err(KecError::Width {
            what: "pair representation",
            expected: width,
            found: rep_width,
        });
    }
    if k != distances.len() {
        return Err(KecError::CountMismatch {
            reps: k,
            distances: distances.len(),
        });
    }
    let raw = g.matmul_nt(query, reps).map_err(non_finite_score)?;
    let scores = g.scale(raw, 1.0 / (width as f64).sqrt()).map_err(non_finite_score)?;
    let clamped = distances.iter().map(|d| d.max(DISTANCE_FLOOR));
    let (lambda, factors) = match polarity {
        Polarity::Relevant => (g.softmax_rows(scores)?, clamped.map(|d| 1.0 / d).collect()),
        Polarity::Irrelevant => {
            let flipped = g.neg(scores)?;
            let s = g.softmax_rows(flipped)?;
            (g.neg(s)?, clamped.collect())
        }
    };
    let unnormalised = g.mul_const(lambda, factors)?;
    let total = g.sum(unnormalised)?;
    let weights = g.div_scalar(unnormalised, total)?;
    let output = g.matmul(weights, reps)?;
    Ok(SignedAttentionNodes { output, lambda, weights })
}

fn non_finite_score(e: KernelError) -> KecError {
    match e {
        KernelError::NonFinite { .. } => KecError::NonFiniteScore,
        other => KecError::Kernel(other),
    }
}

/// Trainable map from `[h^u; h^v]` (width `2·d_e`) to the query width `2d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KecProjection {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl KecProjection {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, input: usize, output: usize, rng: &mut R) -> Self {
        let weight = store.add(GROUP_PROJECTION, "kec_projection.weight", glorot_uniform(input, output, rng));
        let bias = store.add(
            GROUP_PROJECTION,
            "kec_projection.bias",
            Tensor::zeros(vec![1, output]).expect("positive width"),
        );
        Self {
            weight,
            bias,
            input,
            output,
        }
    }
}

/// Selected pairs of one set, ready for the attention step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedPairs {
    pub relevant: Vec<PairCorrelation>,
    pub irrelevant: Vec<PairCorrelation>,
}

impl SelectedPairs {
    pub fn from_scored(scored: &[PairCorrelation], k: usize) -> Result<Self, KecError> {
        let top = select_topk(scored, k)?;
        Ok(Self {
            relevant: top.relevant.iter().map(|&i| scored[i].clone()).collect(),
            irrelevant: top.irrelevant.iter().map(|&i| scored[i].clone()).collect(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KecOptions {
    /// Zero the consistency (relevant) half.
    pub disable_relevant: bool,
    /// Zero the inconsistency (irrelevant) half.
    pub disable_irrelevant: bool,
    pub frozen: bool,
}

/// Graph handles of one entity correlation.
#[derive(Debug, Clone)]
pub struct CorrelationNodes {
    /// `[1, 2·width]` = `[f_re; f_ir]`.
    pub output: NodeId,
    pub relevant: Option<SignedAttentionNodes>,
    pub irrelevant: Option<SignedAttentionNodes>,
}

fn project(
    g: &mut Graph,
    store: &ParamStore,
    proj: &KecProjection,
    pairs: &[PairCorrelation],
    frozen: bool,
) -> Result<NodeId, KecError> {
    let rows: Vec<Vec<f64>> = pairs.iter().map(PairCorrelation::concat).collect();
    if let Some(bad) = rows.iter().find(|r| r.len() != proj.input) {
        return Err(KecError::Width {
            what: "pair concatenation",
            expected: proj.input,
            found: bad.len(),
        });
    }
    let x = g.constant(Tensor::from_rows(&rows)?)?;
    let (w, b) = if frozen {
        (g.frozen_param(store, proj.weight)?, g.frozen_param(store, proj.bias)?)
    } else {
        (g.param(store, proj.weight)?, g.param(store, proj.bias)?)
    };
    Ok(g.linear(x, w, b)?)
}

/// `[f_re; f_ir]` for one pair set; zeros when the set is empty.
pub fn entity_correlation(
    g: &mut Graph,
    store: &ParamStore,
    proj: &KecProjection,
    query: NodeId,
    selected: &SelectedPairs,
    opts: KecOptions,
) -> Result<CorrelationNodes, KecError> {
    let (_, width) = g.value(query).dims2()?;
    if width != proj.output {
        return Err(KecError::Width {
            what: "query",
            expected: proj.output,
            found: width,
        });
    }
    let zeros = |g: &mut Graph| g.constant(Tensor::zeros(vec![1, width]).expect("positive width"));
    if selected.is_empty() {
        let output = g.constant(Tensor::zeros(vec![1, 2 * width])?)?;
        return Ok(CorrelationNodes {
            output,
            relevant: None,
            irrelevant: None,
        });
    }
    let half = |g: &mut Graph, pairs: &[PairCorrelation], polarity, off: bool| -> Result<_, KecError> {
        if off {
            return Ok((zeros(g)?, None));
        }
        let reps = project(g, store, proj, pairs, opts.frozen)?;
        let d: Vec<f64> = pairs.iter().map(|p| p.distance).collect();
        let att = signed_attention_node(g, query, reps, &d, polarity)?;
        Ok((att.output, Some(att)))
    };
    let (re, relevant) = half(g, &selected.relevant, Polarity::Relevant, opts.disable_relevant)?;
    let (ir, irrelevant) = half(g, &selected.irrelevant, Polarity::Irrelevant, opts.disable_irrelevant)?;
    let output = g.concat_cols(&[re, ir])?;
    Ok(CorrelationNodes {
        output,
        relevant,
        irrelevant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(xs: &[u32]) -> Vec<EntityId> {
        xs.iter().map(|&x| EntityId(x)).collect()
    }

    fn pc(a: u32, b: u32, distance: f64) -> PairCorrelation {
        PairCorrelation {
            first: EntityId(a),
            second: EntityId(b),
            head: vec![a as f64, 1.0],
            tail: vec![b as f64, -1.0],
            distance,
            connected: true,
            hops: Some(1),
        }
    }

    #[test]
    fn pair_set_counts() {
        let [tt, tv, vv] = build_pair_sets(&ids(&[0, 1]), &ids(&[2, 3]));
        assert_eq!((tt.len(), tv.len(), vv.len()), (1, 4, 1));
        let [tt, tv, vv] = build_pair_sets(&ids(&[5]), &ids(&[]));
        assert!(tt.is_empty() && tv.is_empty() && vv.is_empty());
        let [tt, tv, vv] = build_pair_sets(&ids(&[9, 1, 4, 7]), &ids(&[2, 8, 3]));
        assert_eq!((tt.len(), tv.len(), vv.len()), (6, 12, 3));
        assert!(tv.pairs.iter().all(|(a, b)| a < b));
        assert_eq!(tt.kind, PairKind::TT);
    }

    #[test]
    fn shared_entities_collapse_cross_pairs() {
        // (1,2) from text→visual and (2,1) are one canonical pair; (1,1) stays
        let [_, tv, _] = build_pair_sets(&ids(&[1, 2]), &ids(&[2, 1]));
        assert_eq!(
            tv.pairs,
            vec![(EntityId(1), EntityId(1)), (EntityId(1), EntityId(2)), (EntityId(2), EntityId(2))]
        );
    }

    #[test]
    fn topk_selection() {
        let pairs = vec![pc(0, 1, 0.5), pc(0, 2, 0.1), pc(0, 3, 0.9), pc(1, 2, 0.3), pc(1, 3, 0.7)];
        let top = select_topk(&pairs, 3).unwrap();
        assert_eq!(top.relevant, vec![1, 3, 0]);
        assert_eq!(top.irrelevant, vec![2, 4, 0]);

        let two = vec![pc(0, 1, 0.5), pc(0, 2, 0.1)];
        let top = select_topk(&two, 3).unwrap();
        assert_eq!(top.relevant, vec![1, 0]);
        assert_eq!(top.irrelevant, vec![0, 1]);

        let flat = vec![pc(2, 3, 1.0), pc(0, 3, 1.0), pc(1, 2, 1.0), pc(0, 1, 1.0)];
        let top = select_topk(&flat, 2).unwrap();
        assert_eq!(top.relevant, vec![3, 1]);
        assert_eq!(top.irrelevant, vec![3, 1]);
        assert_eq!(select_topk(&flat, 0), Err(KecError::InvalidK));
    }

    #[test]
    fn reweighting_cases() {
        let w = effective_weights(&[0.4, 0.4], &[1.0, 2.0], Polarity::Relevant).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-10 && (w[1] - 1.0 / 3.0).abs() < 1e-10);
        let w = effective_weights(&[-1.3, -1.3], &[1.0, 3.0], Polarity::Irrelevant).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-10 && (w[1] - 0.75).abs() < 1e-10);
        for p in [Polarity::Relevant, Polarity::Irrelevant] {
            assert_eq!(effective_weights(&[7.0], &[0.0], p).unwrap(), vec![1.0]);
        }
        assert_eq!(
            effective_weights(&[f64::NAN, 0.0], &[1.0, 1.0], Polarity::Relevant),
            Err(KecError::NonFiniteScore)
        );
    }

    #[test]
    fn equal_inputs_average() {
        let reps = vec![vec![1.0, 0.0, 2.0], vec![3.0, 4.0, 0.0], vec![-1.0, 2.0, 1.0]];
        let q = vec![0.0; 3];
        let out = signed_attention(&q, &reps, &[0.5; 3], Polarity::Relevant).unwrap();
        for (o, want) in out.iter().zip([1.0, 2.0, 1.0]) {
            assert!((o - want).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_in_distance() {
        let scores = [0.3, -0.2, 0.9];
        let base = [0.5, 0.8, 1.2];
        let w_re = effective_weights(&scores, &base, Polarity::Relevant).unwrap();
        let w_ir = effective_weights(&scores, &base, Polarity::Irrelevant).unwrap();
        let mut closer = base;
        closer[1] = 0.4;
        assert!(effective_weights(&scores, &closer, Polarity::Relevant).unwrap()[1] > w_re[1]);
        let mut farther = base;
        farther[1] = 2.0;
        assert!(effective_weights(&scores, &farther, Polarity::Irrelevant).unwrap()[1] > w_ir[1]);
    }

    #[test]
    fn tape_matches_plain_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let query: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let reps: Vec<Vec<f64>> = (0..3).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let d = [0.2, 1.5, 0.7];
        for polarity in [Polarity::Relevant, Polarity::Irrelevant] {
            let want = signed_attention(&query, &reps, &d, polarity).unwrap();
            let mut g = Graph::new();
            let q = g.constant(Tensor::row(query.clone()).unwrap()).unwrap();
            let r = g.constant(Tensor::from_rows(&reps).unwrap()).unwrap();
            let nodes = signed_attention_node(&mut g, q, r, &d, polarity).unwrap();
            for (a, b) in g.value(nodes.output).data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
            let lambda_sum: f64 = g.value(nodes.lambda).data().iter().sum();
            let sign = if polarity == Polarity::Relevant { 1.0 } else { -1.0 };
            assert!((lambda_sum - sign).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_invariance() {
        let query = vec![0.3, -0.7, 0.2, 0.9];
        let reps = vec![vec![1.0, 0.5, -0.2, 0.0], vec![0.1, 0.1, 0.8, -0.4], vec![-0.6, 0.2, 0.3, 0.7]];
        let d = [0.3, 0.9, 2.0];
        for polarity in [Polarity::Relevant, Polarity::Irrelevant] {
            let a = signed_attention(&query, &reps, &d, polarity).unwrap();
            let perm = [2, 0, 1];
            let reps_p: Vec<Vec<f64>> = perm.iter().map(|&i| reps[i].clone()).collect();
            let d_p: Vec<f64> = perm.iter().map(|&i| d[i]).collect();
            let b = signed_attention(&query, &reps_p, &d_p, polarity).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn fixture() -> (ParamStore, KecProjection) {
        let mut store = ParamStore::new();
        let proj = KecProjection::new(&mut store, 4, 6, &mut ChaCha8Rng::seed_from_u64(9));
        (store, proj)
    }

    #[test]
    fn correlation_shapes_and_degenerate_sets() {
        let (store, proj) = fixture();
        let mut g = Graph::new();
        let q = g.constant(Tensor::row(vec![0.1, 0.2, -0.3, 0.4, 0.0, 0.5]).unwrap()).unwrap();

        let empty = SelectedPairs::from_scored(&[], 3).unwrap();
        let out = entity_correlation(&mut g, &store, &proj, q, &empty, KecOptions::default()).unwrap();
        assert_eq!(g.value(out.output).data(), &[0.0; 12]);

        let single = SelectedPairs::from_scored(&[pc(0, 1, 0.4)], 3).unwrap();
        let out = entity_correlation(&mut g, &store, &proj, q, &single, KecOptions::default()).unwrap();
        let v = g.value(out.output).data().to_vec();
        assert_eq!(v.len(), 12);
        assert_eq!(&v[..6], &v[6..]);
        let rep = crate::nn::matmul(&pc(0, 1, 0.4).concat(), store.get(proj.weight).data(), 1, 4, 6);
        for (a, b) in v[..6].iter().zip(&rep) {
            assert!((a - b).abs() < 1e-12);
        }

        let many: Vec<_> = (1..6).map(|j| pc(0, j, j as f64 * 0.3)).collect();
        let sel = SelectedPairs::from_scored(&many, 3).unwrap();
        let opts = KecOptions {
            disable_irrelevant: true,
            ..Default::default()
        };
        let out = entity_correlation(&mut g, &store, &proj, q, &sel, opts).unwrap();
        assert!(g.value(out.output).data()[6..].iter().all(|x| *x == 0.0));
        assert!(out.irrelevant.is_none());
    }

    #[test]
    fn projection_receives_gradient() {
        let (store, proj) = fixture();
        let mut g = Graph::new();
        let q = g.param(&store, proj.bias).unwrap();
        let many: Vec<_> = (1..6).map(|j| pc(0, j, j as f64 * 0.3)).collect();
        let sel = SelectedPairs::from_scored(&many, 3).unwrap();
        let out = entity_correlation(&mut g, &store, &proj, q, &sel, KecOptions::default()).unwrap();
        let s = g.sum(out.output).unwrap();
        let grads = g.backward(s, &store).unwrap();
        assert!(grads.get(proj.weight).data().iter().any(|x| *x != 0.0));
    }
}
