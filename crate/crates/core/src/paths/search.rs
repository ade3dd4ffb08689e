//! Hop-capped bidirectional breadth-first search.
//!
//! The pair is canonicalised to `(min, max)` before searching, frontiers are
//! expanded level by level with neighbours in ascending id order, the smaller
//! frontier is expanded first (forward on ties), and every node keeps the
//! predecessor that reached it first. The search stops at the first node seen
//! from both sides; all such nodes discovered during one level expansion lie
//! on minimum-hop paths, so the first one in scan order fixes the result.

use serde::Serialize;

use crate::kg::{EntityId, KgError, KnowledgeGraph};

use super::PathError;

pub const DEFAULT_HOP_CAP: usize = 5;

/// A simple path `[w_0, …, w_m]` between two entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SemanticPath {
    nodes: Vec<EntityId>,
}

impl SemanticPath {
    pub fn nodes(&self) -> &[EntityId] {
        &self.nodes
    }

    /// Number of edges `m`.
    pub fn hops(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn head(&self) -> EntityId {
        self.nodes[0]
    }

    pub fn tail(&self) -> EntityId {
        *self.nodes.last().expect("paths are non-empty")
    }

    pub fn reversed(&self) -> Self {
        let mut nodes = self.nodes.clone();
        nodes.reverse();
        Self { nodes }
    }

    /// Checks adjacency of consecutive nodes and absence of repeats.
    pub fn is_valid_in(&self, graph: &KnowledgeGraph) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.nodes.iter().all(|n| seen.insert(*n))
            && self.nodes.windows(2).all(|w| graph.are_adjacent(w[0], w[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathOutcome {
    Found(SemanticPath),
    /// No path of at most `hop_cap` edges exists.
    NotConnected,
}

impl PathOutcome {
    pub fn path(&self) -> Option<&SemanticPath> {
        match self {
            PathOutcome::Found(p) => Some(p),
            PathOutcome::NotConnected => None,
        }
    }
}

/// Reusable scratch space for repeated searches on one graph.
///
/// Visit marks are generation-stamped, so a query costs time proportional to
/// the nodes it touches rather than the graph size.
#[derive(Debug, Clone)]
pub struct PathSearcher {
    generation: u32,
    mark_fwd: Vec<u32>,
    mark_bwd: Vec<u32>,
    pred_fwd: Vec<EntityId>,
    pred_bwd: Vec<EntityId>,
    frontier_fwd: Vec<EntityId>,
    frontier_bwd: Vec<EntityId>,
    next: Vec<EntityId>,
}

impl PathSearcher {
    pub fn new(graph: &KnowledgeGraph) -> Self {
        let n = graph.len();
        Self {
            generation: 0,
            mark_fwd: vec![0; n],
            mark_bwd: vec![0; n],
            pred_fwd: vec![EntityId(0); n],
            pred_bwd: vec![EntityId(0); n],
            frontier_fwd: Vec::new(),
            frontier_bwd: Vec::new(),
            next: Vec::new(),
        }
    }

    fn next_generation(&mut self, n: usize) {
        if self.mark_fwd.len() != n {
            *self = Self {
                generation: 0,
                mark_fwd: vec![0; n],
                mark_bwd: vec![0; n],
                pred_fwd: vec![EntityId(0); n],
                pred_bwd: vec![EntityId(0); n],
                frontier_fwd: Vec::new(),
                frontier_bwd: Vec::new(),
                next: Vec::new(),
            };
        }
        if self.generation == u32::MAX {
            self.mark_fwd.iter_mut().for_each(|m| *m = 0);
            self.mark_bwd.iter_mut().for_each(|m| *m = 0);
            self.generation = 0;
        }
        self.generation += 1;
    }

    /// Minimum-hop path from `u` to `v` using at most `hop_cap` edges.
    /// `search(u, v)` and `search(v, u)` return reversed copies of one path.
    pub fn search(
        &mut self,
        graph: &KnowledgeGraph,
        u: EntityId,
        v: EntityId,
        hop_cap: usize,
    ) -> Result<PathOutcome, PathError> {
        if hop_cap == 0 {
            return Err(PathError::InvalidHopCap);
        }
        graph.check(u).map_err(PathError::Graph)?;
        graph.check(v).map_err(PathError::Graph)?;
        if u == v {
            return Ok(PathOutcome::Found(SemanticPath { nodes: vec![u] }));
        }
        let (a, b) = if u < v { (u, v) } else { (v, u) };
        let outcome = self.search_canonical(graph, a, b, hop_cap);
        Ok(match outcome {
            Some(path) if u == a => PathOutcome::Found(path),
            Some(path) => PathOutcome::Found(path.reversed()),
            None => PathOutcome::NotConnected,
        })
    }

    fn search_canonical(&mut self, graph: &KnowledgeGraph, a: EntityId, b: EntityId, hop_cap: usize) -> Option<SemanticPath> {
        self.next_generation(graph.len());
        let gen = self.generation;
        self.mark_fwd[a.index()] = gen;
        self.mark_bwd[b.index()] = gen;
        self.frontier_fwd.clear();
        self.frontier_bwd.clear();
        self.frontier_fwd.push(a);
        self.frontier_bwd.push(b);
        let (mut depth_fwd, mut depth_bwd) = (0usize, 0usize);

        while depth_fwd + depth_bwd < hop_cap {
            if self.frontier_fwd.is_empty() || self.frontier_bwd.is_empty() {
                return None;
            }
            let forward = self.frontier_fwd.len() <= self.frontier_bwd.len();
            let meet = if forward {
                depth_fwd += 1;
                expand(
                    graph,
                    gen,
                    &mut self.frontier_fwd,
                    &mut self.next,
                    &mut self.mark_fwd,
                    &mut self.pred_fwd,
                    &self.mark_bwd,
                )
            } else {
                depth_bwd += 1;
                expand(
                    graph,
                    gen,
                    &mut self.frontier_bwd,
                    &mut self.next,
                    &mut self.mark_bwd,
                    &mut self.pred_bwd,
                    &self.mark_fwd,
                )
            };
            if let Some(meet) = meet {
                return Some(self.assemble(a, b, meet));
            }
        }
        None
    }

    fn assemble(&self, a: EntityId, b: EntityId, meet: EntityId) -> SemanticPath {
        let mut nodes = Vec::new();
        let mut cur = meet;
        while cur != a {
            cur = self.pred_fwd[cur.index()];
            nodes.push(cur);
        }
        nodes.reverse();
        nodes.push(meet);
        let mut cur = meet;
        while cur != b {
            cur = self.pred_bwd[cur.index()];
            nodes.push(cur);
        }
        SemanticPath { nodes }
    }
}

/// Expands one full level; returns the first node already marked by the other side.
fn expand(
    graph: &KnowledgeGraph,
    gen: u32,
    frontier: &mut Vec<EntityId>,
    next: &mut Vec<EntityId>,
    mark: &mut [u32],
    pred: &mut [EntityId],
    other: &[u32],
) -> Option<EntityId> {
    next.clear();
    for &x in frontier.iter() {
        for &y in graph.neighbors_unchecked(x) {
            let yi = y.index();
            if mark[yi] == gen {
                continue;
            }
            mark[yi] = gen;
            pred[yi] = x;
            if other[yi] == gen {
                return Some(y);
            }
            next.push(y);
        }
    }
    std::mem::swap(frontier, next);
    None
}

/// One-off search; allocates fresh scratch space.
pub fn shortest_path(graph: &KnowledgeGraph, u: EntityId, v: EntityId, hop_cap: usize) -> Result<PathOutcome, PathError> {
    PathSearcher::new(graph).search(graph, u, v, hop_cap)
}

impl From<KgError> for PathError {
    fn from(e: KgError) -> Self {
        PathError::Graph(e)
    }
}
