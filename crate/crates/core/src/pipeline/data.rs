//! Posts on disk and their resolution against the knowledge graph.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::kg::{EmbeddingTable, EntityId, KnowledgeGraph};
use crate::nn::Tensor;

use super::PipelineError;

/// File label of a rumor post.
pub const LABEL_RUMOR: u8 = 0;
/// File label of a non-rumor post.
pub const LABEL_NON_RUMOR: u8 = 1;
pub const MAX_TEXT_LEN: usize = 128;
pub const VISUAL_LEN: usize = 49;
/// Text length used when features come from a seed.
pub const SEEDED_TEXT_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Post {
    pub id: String,
    /// 0 = rumor, 1 = non-rumor.
    pub label: u8,
    pub text_entities: Vec<String>,
    pub visual_entities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_seed: Option<u64>,
}

impl Post {
    pub fn is_rumor(&self) -> bool {
        self.label == LABEL_RUMOR
    }

    /// Training target: 1 for rumor, the positive class.
    pub fn target(&self) -> f64 {
        if self.is_rumor() {
            1.0
        } else {
            0.0
        }
    }

    fn bad(&self, reason: impl Into<String>) -> PipelineError {
        PipelineError::Post {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    /// `(text [L, d_t], visual [49, d_v])`. Seeded posts get standard-normal
    /// features of width `raw_dim`.
    pub fn features(&self, raw_dim: usize) -> Result<(Tensor, Tensor), PipelineError> {
        match (&self.text_features, &self.visual_features, self.feature_seed) {
            (Some(t), Some(v), _) => {
                if t.is_empty() || t.len() > MAX_TEXT_LEN {
                    return Err(self.bad(format!("text length {} outside 1..={MAX_TEXT_LEN}", t.len())));
                }
                if v.len() != VISUAL_LEN {
                    return Err(self.bad(format!("visual length {} (expected {VISUAL_LEN})", v.len())));
                }
                let text = matrix(t).ok_or_else(|| self.bad("ragged or empty text feature rows"))?;
                let visual = matrix(v).ok_or_else(|| self.bad("ragged or empty visual feature rows"))?;
                if !text.is_finite() || !visual.is_finite() {
                    return Err(self.bad("non-finite feature value"));
                }
                Ok((text, visual))
            }
            (None, None, Some(seed)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = |rows: usize| {
                    let data = (0..rows * raw_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    Tensor::matrix(rows, raw_dim, data).expect("positive shape")
                };
                let text = draw(SEEDED_TEXT_LEN);
                Ok((text, draw(VISUAL_LEN)))
            }
            _ => Err(self.bad("needs both feature arrays or a feature_seed")),
        }
    }
}

fn matrix(rows: &[Vec<f64>]) -> Option<Tensor> {
    let width = rows.first()?.len();
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return None;
    }
    Tensor::from_rows(rows).ok()
}

pub fn read_posts(path: &Path) -> Result<Vec<Post>, PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut posts = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let post: Post = serde_json::from_str(&line).map_err(|e| PipelineError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if post.label > 1 {
            return Err(post.bad(format!("label {} is not 0 or 1", post.label)));
        }
        if !ids.insert(post.id.clone()) {
            return Err(post.bad("duplicate id"));
        }
        posts.push(post);
    }
    if posts.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    Ok(posts)
}

pub fn write_posts<W: Write>(posts: &[Post], mut out: W) -> Result<(), PipelineError> {
    for p in posts {
        serde_json::to_writer(&mut out, p).map_err(|e| PipelineError::Config(e.to_string()))?;
        out.write_all(b"\n").map_err(|source| PipelineError::Io {
            path: "<posts>".into(),
            source,
        })?;
    }
    Ok(())
}

/// Maps names to ids, dropping (with a warning) unknown names and entities
/// without embeddings, and removing repeats while keeping first occurrences.
pub fn resolve_entities(
    post_id: &str,
    names: &[String],
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
) -> (Vec<EntityId>, usize) {
    let mut out = Vec::new();
    let mut dropped = 0;
    for name in names {
        match graph.id(name) {
            Some(id) if embeddings.contains(id) => {
                if !out.contains(&id) {
                    out.push(id);
                }
            }
            Some(_) => {
                log::warn!("post {post_id}: entity `{name}` has no embedding; dropped");
                dropped += 1;
            }
            None => {
                log::warn!("post {post_id}: unknown entity `{name}`; dropped");
                dropped += 1;
            }
        }
    }
    (out, dropped)
}

/// Fixed 70/10/20 partition of post indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
    All,
}

impl Split {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        order.shuffle(&mut rng);
        let n_train = (n as f64 * 0.7).round() as usize;
        let n_val = (n as f64 * 0.1).round() as usize;
        let test = order.split_off((n_train + n_val).min(n));
        let validation = order.split_off(n_train.min(order.len()));
        Self {
            train: order,
            validation,
            test,
        }
    }

    pub fn part(&self, which: SplitPart) -> Vec<usize> {
        match which {
            SplitPart::Train => self.train.clone(),
            SplitPart::Validation => self.validation.clone(),
            SplitPart::Test => self.test.clone(),
            SplitPart::All => {
                let mut all: Vec<usize> = self.train.iter().chain(&self.validation).chain(&self.test).copied().collect();
                all.sort_unstable();
                all
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(json: &str) -> Post {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn feature_shapes() {
        let visual: Vec<Vec<f64>> = vec![vec![0.5, 0.5]; 49];
        let p = Post {
            id: "a".into(),
            label: 0,
            text_entities: vec![],
            visual_entities: vec![],
            text_features: Some(vec![vec![1.0, 2.0], vec![3.0, 4.0]]),
            visual_features: Some(visual.clone()),
            feature_seed: None,
        };
        let (t, v) = p.features(8).unwrap();
        assert_eq!((t.shape(), v.shape()), (&[2, 2][..], &[49, 2][..]));
        let short = Post {
            visual_features: Some(visual[..48].to_vec()),
            ..p.clone()
        };
        assert!(short.features(8).is_err());
        let ragged = Post {
            text_features: Some(vec![vec![1.0], vec![1.0, 2.0]]),
            ..p.clone()
        };
        assert!(ragged.features(8).is_err());
    }

    #[test]
    fn seeded_features_are_reproducible() {
        let p = post(r#"{"id":"s","label":1,"text_entities":["x"],"visual_entities":[],"feature_seed":7}"#);
        let (t1, v1) = p.features(5).unwrap();
        let (t2, v2) = p.features(5).unwrap();
        assert_eq!((t1.shape(), v1.shape()), (&[SEEDED_TEXT_LEN, 5][..], &[49, 5][..]));
        assert_eq!((t1, v1), (t2, v2));
        assert!(!p.is_rumor());
        assert_eq!(p.target(), 0.0);
    }

    #[test]
    fn rejects_unknown_fields() {
        assert!(serde_json::from_str::<Post>(r#"{"id":"x","label":0,"text_entities":[],"visual_entities":[],"extra":1}"#).is_err());
    }

    #[test]
    fn split_partitions() {
        let s = Split::new(400, 42);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (280, 40, 80));
        assert_eq!(s.part(SplitPart::All), (0..400).collect::<Vec<_>>());
        assert_eq!(s, Split::new(400, 42));
        assert_ne!(s.test, Split::new(400, 43).test);
        let tiny = Split::new(1, 0);
        assert_eq!(tiny.train.len() + tiny.validation.len() + tiny.test.len(), 1);
    }
}
