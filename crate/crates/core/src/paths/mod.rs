//! Knowledge relevance reasoning over the entity graph.
//!
//! For an entity pair the reasoner finds a minimum-hop path, folds the
//! embeddings along it into one representation per endpoint with
//! exponentially decaying weights, and measures the Euclidean distance
//! between the two endpoint representations.

mod oracle;
mod repr;
mod search;

use thiserror::Error;

use crate::kg::KgError;

pub use oracle::{all_pairs_oracle, HopMatrix, ORACLE_NODE_LIMIT};
pub use repr::{
    calibrate_d_max, path_representation, path_weights, semantic_distance, Endpoint, PairCorrelation, PairScorer,
    ReasonerConfig, ScoringMode, DEFAULT_ALPHA,
};
pub use search::{shortest_path, PathOutcome, PathSearcher, SemanticPath, DEFAULT_HOP_CAP};

#[derive(Debug, Error)]
pub enum PathError {
    #[error(transparent)]
    Graph(KgError),
    #[error("hop cap must be at least 1")]
    InvalidHopCap,
    #[error("decay coefficient must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("entity `{0}` has no embedding")]
    MissingEmbedding(String),
    #[error("oracle refuses graphs above {limit} nodes (got {nodes})")]
    OracleTooLarge { nodes: usize, limit: usize },
}
