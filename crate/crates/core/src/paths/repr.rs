//! Path-aware entity representations and the semantic relevant distance.
//!
//! For a path `w_0 … w_m` with embeddings `g`, the head representation is
//!
//! ```text
//! h_head = (1 − α) / (1 − α^{m+1}) · Σ_i α^i · g(w_i)
//! ```
//!
//! and the tail representation uses `α^{m−i}`. The distance is
//! `‖h_head − h_tail‖₂`.

use std::collections::HashMap;
use std::sync::RwLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{EmbeddingTable, EntityId, KnowledgeGraph};

use super::search::{PathOutcome, PathSearcher, SemanticPath, DEFAULT_HOP_CAP};
use super::PathError;

pub const DEFAULT_ALPHA: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Head,
    Tail,
}

/// Convex weights over the `m + 1` path positions.
pub fn path_weights(hops: usize, alpha: f64, endpoint: Endpoint) -> Result<Vec<f64>, PathError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PathError::InvalidAlpha(alpha));
    }
    let norm = (1.0 - alpha) / (1.0 - alpha.powi(hops as i32 + 1));
    let mut w: Vec<f64> = (0..=hops).map(|i| norm * alpha.powi(i as i32)).collect();
    if endpoint == Endpoint::Tail {
        w.reverse();
    }
    Ok(w)
}

fn embedding<'a>(
    graph: &KnowledgeGraph,
    embeddings: &'a EmbeddingTable,
    id: EntityId,
) -> Result<&'a [f64], PathError> {
    embeddings
        .get(id)
        .ok_or_else(|| PathError::MissingEmbedding(graph.name(id).to_string()))
}

pub fn path_representation(
    path: &SemanticPath,
    endpoint: Endpoint,
    alpha: f64,
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
) -> Result<Vec<f64>, PathError> {
    let weights = path_weights(path.hops(), alpha, endpoint)?;
    let mut h = vec![0.0; embeddings.dim()];
    for (node, w) in path.nodes().iter().zip(&weights) {
        let g = embedding(graph, embeddings, *node)?;
        h.iter_mut().zip(g).for_each(|(acc, x)| *acc += w * x);
    }
    Ok(h)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// How pair distances are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoringMode {
    /// Shortest path plus path-aware representations.
    Path,
    /// Endpoint embeddings and their direct distance, no graph search.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReasonerConfig {
    pub hop_cap: usize,
    pub alpha: f64,
    /// Distance assigned to pairs with no path within `hop_cap`.
    pub d_max: f64,
    pub mode: ScoringMode,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            hop_cap: DEFAULT_HOP_CAP,
            alpha: DEFAULT_ALPHA,
            d_max: 1.0,
            mode: ScoringMode::Path,
        }
    }
}

/// Knowledge-enhanced correlation of a canonical pair `(first < second)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCorrelation {
    pub first: EntityId,
    pub second: EntityId,
    /// Representation of `first` (head of the canonical path).
    pub head: Vec<f64>,
    /// Representation of `second`.
    pub tail: Vec<f64>,
    pub distance: f64,
    pub connected: bool,
    pub hops: Option<usize>,
}

impl PairCorrelation {
    /// `[h_first; h_second]`.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.head.clone();
        v.extend_from_slice(&self.tail);
        v
    }
}

fn canonical(u: EntityId, v: EntityId) -> (EntityId, EntityId) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

fn score_pair(
    searcher: &mut PathSearcher,
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    config: &ReasonerConfig,
    u: EntityId,
    v: EntityId,
) -> Result<PairCorrelation, PathError> {
    graph.check(u)?;
    graph.check(v)?;
    let (first, second) = canonical(u, v);
    let g_first = embedding(graph, embeddings, first)?;
    let g_second = embedding(graph, embeddings, second)?;
    if config.mode == ScoringMode::Direct {
        return Ok(PairCorrelation {
            first,
            second,
            head: g_first.to_vec(),
            tail: g_second.to_vec(),
            distance: euclidean(g_first, g_second),
            connected: true,
            hops: None,
        });
    }
    match searcher.search(graph, first, second, config.hop_cap)? {
        PathOutcome::Found(path) => {
            let head = path_representation(&path, Endpoint::Head, config.alpha, graph, embeddings)?;
            let tail = path_representation(&path, Endpoint::Tail, config.alpha, graph, embeddings)?;
            let distance = euclidean(&head, &tail);
            Ok(PairCorrelation {
                first,
                second,
                head,
                tail,
                distance,
                connected: true,
                hops: Some(path.hops()),
            })
        }
        PathOutcome::NotConnected => Ok(PairCorrelation {
            first,
            second,
            head: g_first.to_vec(),
            tail: g_second.to_vec(),
            distance: config.d_max,
            connected: false,
            hops: None,
        }),
    }
}

/// Scores one pair with fresh scratch space. Symmetric in `u` and `v`.
pub fn semantic_distance(
    u: EntityId,
    v: EntityId,
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    config: &ReasonerConfig,
) -> Result<PairCorrelation, PathError> {
    let mut searcher = PathSearcher::new(graph);
    score_pair(&mut searcher, graph, embeddings, config, u, v)
}

/// `D_max` = `factor` × the largest connected distance among `samples`
/// seeded random pairs of embedded entities. Falls back to the largest
/// direct embedding distance when no sampled pair is connected, and to 1.0
/// when that is zero too.
pub fn calibrate_d_max(
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    hop_cap: usize,
    alpha: f64,
    samples: usize,
    factor: f64,
    seed: u64,
) -> Result<f64, PathError> {
    let embedded: Vec<EntityId> = graph.entities().filter(|e| embeddings.contains(*e)).collect();
    if embedded.len() < 2 {
        return Ok(1.0);
    }
    let config = ReasonerConfig {
        hop_cap,
        alpha,
        d_max: 0.0,
        mode: ScoringMode::Path,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut searcher = PathSearcher::new(graph);
    let (mut best_connected, mut best_direct) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let u = embedded[rng.random_range(0..embedded.len())];
        let v = embedded[rng.random_range(0..embedded.len())];
        let pc = score_pair(&mut searcher, graph, embeddings, &config, u, v)?;
        if pc.connected {
            best_connected = best_connected.max(pc.distance);
        }
        best_direct = best_direct.max(euclidean(&pc.head, &pc.tail));
    }
    let base = if best_connected > 0.0 { best_connected } else { best_direct };
    Ok(if base > 0.0 { factor * base } else { 1.0 })
}

/// Caching pair scorer over an immutable graph. The cache is keyed by the
/// canonical pair and safe for concurrent readers and writers.
#[derive(Debug)]
pub struct PairScorer<'g> {
    graph: &'g KnowledgeGraph,
    embeddings: &'g EmbeddingTable,
    config: ReasonerConfig,
    cache: RwLock<HashMap<(EntityId, EntityId), PairCorrelation>>,
}

impl<'g> PairScorer<'g> {
    pub fn new(graph: &'g KnowledgeGraph, embeddings: &'g EmbeddingTable, config: ReasonerConfig) -> Self {
        Self {
            graph,
            embeddings,
            config,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &ReasonerConfig {
        &self.config
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        self.graph
    }

    pub fn new_searcher(&self) -> PathSearcher {
        PathSearcher::new(self.graph)
    }

    pub fn cached_pairs(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    pub fn score(&self, searcher: &mut PathSearcher, u: EntityId, v: EntityId) -> Result<PairCorrelation, PathError> {
        let key = canonical(u, v);
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let pc = score_pair(searcher, self.graph, self.embeddings, &self.config, u, v)?;
        self.cache
            .write()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| pc.clone());
        Ok(pc)
    }
}
