//! Exact all-pairs hop distances by Floyd–Warshall. Test fixture only.

use crate::kg::{EntityId, KnowledgeGraph};

use super::PathError;

pub const ORACLE_NODE_LIMIT: usize = 500;

const INF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopMatrix {
    n: usize,
    dist: Vec<u32>,
}

impl HopMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Minimum hop count, or `None` when disconnected.
    pub fn get(&self, u: EntityId, v: EntityId) -> Option<u32> {
        let d = self.dist[u.index() * self.n + v.index()];
        (d != INF).then_some(d)
    }
}

pub fn all_pairs_oracle(graph: &KnowledgeGraph) -> Result<HopMatrix, PathError> {
    let n = graph.len();
    if n > ORACLE_NODE_LIMIT {
        return Err(PathError::OracleTooLarge {
            nodes: n,
            limit: ORACLE_NODE_LIMIT,
        });
    }
    let mut dist = vec![INF; n * n];
    for u in graph.entities() {
        dist[u.index() * n + u.index()] = 0;
        for v in graph.neighbors_unchecked(u) {
            dist[u.index() * n + v.index()] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            let dik = dist[i * n + k];
            if dik == INF {
                continue;
            }
            for j in 0..n {
                let dkj = dist[k * n + j];
                if dkj != INF && dik + dkj < dist[i * n + j] {
                    dist[i * n + j] = dik + dkj;
                }
            }
        }
    }
    Ok(HopMatrix { n, dist })
}
