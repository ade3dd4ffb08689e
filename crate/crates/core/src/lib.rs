//! Multi-modal rumor detection head built around knowledge-graph path
//! reasoning.
//!
//! * [`nn`]: tensors, a reverse-mode tape, attention, Adam.
//! * [`kg`]: triples and entity-embedding loading.
//! * [`paths`]: hop-capped shortest paths, path-aware entity representations
//!   and the semantic relevant distance.
//! * [`bsc`]: dictionary alignment and feature-level fusion.
//! * [`kec`]: entity pair sets, top-k selection and signed attention.
//! * [`pipeline`]: posts, the classifier, training, metrics, synthetic data.

pub mod bsc;
pub mod kec;
pub mod kg;
pub mod nn;
pub mod paths;
pub mod pipeline;
