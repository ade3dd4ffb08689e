//! End-to-end orchestration: posts, the fused classifier, training,
//! evaluation, synthetic data and gradient checking.
//!
//! Labels follow the file convention `0 = rumor, 1 = non-rumor`; internally
//! the classifier predicts the rumor probability and rumor is the positive
//! class for precision, recall and F1.

mod config;
mod data;
mod gradcheck;
mod metrics;
mod model;
mod synth;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::bsc::BscError;
use crate::kec::KecError;
use crate::kg::KgError;
use crate::nn::KernelError;
use crate::paths::PathError;

pub use config::{Ablations, RunConfig, CONFIG_KEYS};
pub use data::{
    read_posts, resolve_entities, write_posts, Post, Split, SplitPart, LABEL_NON_RUMOR, LABEL_RUMOR, MAX_TEXT_LEN,
    SEEDED_TEXT_LEN, VISUAL_LEN,
};
pub use gradcheck::{grad_check, gradcheck_fixture, GradCheckReport, GroupCheck, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use metrics::{Confusion, Metrics};
pub use model::{classifier_width, classify, EpochRecord, Forward, Layout, Model, PreparedPost, GROUP_ADAPTERS, GROUP_CLASSIFIER};
pub use synth::{generate_synthetic, write_synthetic, SynthConfig, SynthDataset, SynthFiles};
pub use train::{
    evaluate, pair_dump, prepare_posts, train, Dataset, EvalReport, PairDumpRecord, Prepared, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("post {id}: {reason}")]
    Post { id: String, reason: String },
    #[error("{what}: expected width {expected}, found {found}")]
    Width {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss on post {post}")]
    NonFiniteLoss { post: String },
    #[error("synthetic data: {0}")]
    Synth(String),
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Bsc(#[from] BscError),
    #[error(transparent)]
    Kec(#[from] KecError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl PipelineError {
    fn detail(&self) -> String {
        match self {
            PipelineError::Config(s) => s.clone(),
            other => other.to_string(),
        }
    }

    /// Attaches a post id; non-finite values become [`PipelineError::NonFiniteLoss`].
    fn for_post(self, id: &str) -> Self {
        let non_finite = matches!(
            self,
            PipelineError::Kernel(KernelError::NonFinite { .. })
                | PipelineError::Kernel(KernelError::NonFiniteGradient(_))
                | PipelineError::Kec(KecError::NonFiniteScore)
                | PipelineError::Kec(KecError::Kernel(KernelError::NonFinite { .. }))
                | PipelineError::Bsc(BscError::Kernel(KernelError::NonFinite { .. }))
        );
        match self {
            _ if non_finite => PipelineError::NonFiniteLoss { post: id.to_string() },
            PipelineError::Post { .. } | PipelineError::NonFiniteLoss { .. } => self,
            other => PipelineError::Post {
                id: id.to_string(),
                reason: other.to_string(),
            },
        }
    }
}
