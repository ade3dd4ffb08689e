//! Knowledge-graph loading: triples become an undirected, deduplicated
//! adjacency structure and entity embeddings are attached by name.
//!
//! Entity ids are dense `0..N` and assigned in lexicographic name order, so the
//! same set of triples always yields the same ids regardless of line order.

mod embeddings;
mod graph;

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use embeddings::EmbeddingTable;
pub use graph::{EntityId, KnowledgeGraph};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: embedding for `{entity}` has {found} values, expected {expected}")]
    Dimension {
        path: PathBuf,
        line: usize,
        entity: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: duplicate embedding for `{entity}`")]
    DuplicateEmbedding { path: PathBuf, line: usize, entity: String },
    #[error("{path}: header declares {declared} rows but {found} were found")]
    RowCount { path: PathBuf, declared: usize, found: usize },
    #[error("entity id {id} out of range (graph has {count} entities)")]
    InvalidEntity { id: usize, count: usize },
}

/// Summary produced by [`load_graph`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub entities: usize,
    pub edges: usize,
    pub duplicate_edges: usize,
    pub self_loops: usize,
    /// Entities present in the triples but absent from the embeddings file.
    pub missing_embeddings: Vec<String>,
    /// Embedding rows whose entity never appears in a triple.
    pub unused_embeddings: usize,
}

/// A loaded graph together with its embeddings and load summary.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub graph: KnowledgeGraph,
    pub embeddings: EmbeddingTable,
    pub report: LoadReport,
}

/// Loads a tab-separated triples file and a whitespace-separated embeddings file.
pub fn load_graph(triples_path: &Path, embeddings_path: &Path) -> Result<KnowledgeBase, KgError> {
    let triples = read_to_string(triples_path)?;
    let (graph, stats) = KnowledgeGraph::parse_triples(&triples, triples_path)?;
    let text = read_to_string(embeddings_path)?;
    let (embeddings, unused) = EmbeddingTable::parse(&text, embeddings_path, &graph)?;
    let missing_embeddings: Vec<String> = graph
        .entities()
        .filter(|id| !embeddings.contains(*id))
        .map(|id| graph.name(id).to_string())
        .collect();
    if !missing_embeddings.is_empty() {
        log::warn!(
            "{} entities have no embedding and will be skipped",
            missing_embeddings.len()
        );
    }
    let report = LoadReport {
        entities: graph.len(),
        edges: graph.edge_count(),
        duplicate_edges: stats.duplicate_edges,
        self_loops: stats.self_loops,
        missing_embeddings,
        unused_embeddings: unused,
    };
    Ok(KnowledgeBase {
        graph,
        embeddings,
        report,
    })
}

fn read_to_string(path: &Path) -> Result<String, KgError> {
    std::fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.to_path_buf(),
        source,
    })
}
