//! Parameters of the full detector and its forward pass.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bsc::{self, BasicCorrelation, BscOptions, BscOutput};
use crate::kec::{self, CorrelationNodes, KecOptions, KecProjection, SelectedPairs};
use crate::nn::{glorot_uniform, Gradients, Graph, NodeId, ParamId, ParamStore, Tensor};

use super::config::RunConfig;
use super::PipelineError;

pub const GROUP_ADAPTERS: &str = "adapters";
pub const GROUP_CLASSIFIER: &str = "classifier";
const MODEL_FORMAT: &str = "kgfuse-model-1";

/// One post with everything the forward pass needs, precomputed.
#[derive(Debug, Clone)]
pub struct PreparedPost {
    pub id: String,
    /// 1 for rumor.
    pub target: f64,
    pub text: Tensor,
    pub visual: Tensor,
    /// Intra-text, cross-modal, intra-visual.
    pub selected: [SelectedPairs; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub text_adapter: (ParamId, ParamId),
    pub visual_adapter: (ParamId, ParamId),
    pub bsc: BasicCorrelation,
    pub kec: KecProjection,
    pub classifier: (ParamId, ParamId),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub validation_accuracy: Option<f64>,
    pub validation_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: RunConfig,
    pub text_dim: usize,
    pub visual_dim: usize,
    pub d_max: f64,
    pub store: ParamStore,
    pub layout: Layout,
    pub history: Vec<EpochRecord>,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub prob: NodeId,
    pub logit: NodeId,
    /// Classifier input, `[1, 18d]`.
    pub features: NodeId,
    pub bsc: BscOutput,
    /// Empty when the knowledge branch is disabled.
    pub correlations: Vec<CorrelationNodes>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    config: RunConfig,
    text_dim: usize,
    visual_dim: usize,
    d_max: f64,
    history: Vec<EpochRecord>,
    params: ParamStore,
}

/// Classifier input width for model width `d`.
pub fn classifier_width(d: usize) -> usize {
    18 * d
}

/// `σ(wᵀ x + b)` over the fused representation.
pub fn classify(g: &mut Graph, features: NodeId, weight: NodeId, bias: NodeId) -> Result<(NodeId, NodeId), PipelineError> {
    let (_, width) = g.value(features).dims2()?;
    let (rows, _) = g.value(weight).dims2()?;
    if width != rows {
        return Err(PipelineError::Width {
            what: "classifier input",
            expected: rows,
            found: width,
        });
    }
    let logit = g.linear(features, weight, bias)?;
    let prob = g.sigmoid(logit)?;
    Ok((prob, logit))
}

impl Model {
    pub fn new(config: &RunConfig, text_dim: usize, visual_dim: usize, d_max: f64) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d;
        let zeros = |n: usize| Tensor::zeros(vec![1, n]).expect("positive width");
        let text_adapter = (
            store.add(GROUP_ADAPTERS, "adapters.text.weight", glorot_uniform(text_dim, d, &mut rng)),
            store.add(GROUP_ADAPTERS, "adapters.text.bias", zeros(d)),
        );
        let visual_adapter = (
            store.add(GROUP_ADAPTERS, "adapters.visual.weight", glorot_uniform(visual_dim, d, &mut rng)),
            store.add(GROUP_ADAPTERS, "adapters.visual.bias", zeros(d)),
        );
        let bsc = BasicCorrelation::new(&mut store, d, config.atoms, config.heads, &mut rng)?;
        let kec = KecProjection::new(&mut store, 2 * config.d_e, 2 * d, &mut rng);
        let width = classifier_width(d);
        let classifier = (
            store.add(GROUP_CLASSIFIER, "classifier.weight", glorot_uniform(width, 1, &mut rng)),
            store.add(GROUP_CLASSIFIER, "classifier.bias", zeros(1)),
        );
        Ok(Self {
            config: config.clone(),
            text_dim,
            visual_dim,
            d_max,
            store,
            layout: Layout {
                text_adapter,
                visual_adapter,
                bsc,
                kec,
                classifier,
            },
            history: Vec::new(),
        })
    }

    /// Groups held fixed under the configured ablations.
    pub fn frozen_groups(&self) -> Vec<&'static str> {
        let a = &self.config.ablations;
        let mut out = Vec::new();
        if a.disable_bsc {
            out.extend([
                bsc::GROUP_DICTIONARY,
                bsc::GROUP_ATTENTION,
                bsc::GROUP_AGGREGATION,
                bsc::GROUP_ALIGN_FALLBACK,
            ]);
        } else if a.disable_align {
            out.extend([bsc::GROUP_DICTIONARY, bsc::GROUP_ATTENTION]);
        } else {
            out.push(bsc::GROUP_ALIGN_FALLBACK);
        }
        if a.disable_kec {
            out.push(kec::GROUP_PROJECTION);
        }
        out
    }

    /// Per-parameter trainability mask for the optimizer.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let frozen = self.frozen_groups();
        self.store.ids().map(|id| !frozen.contains(&self.store.group(id))).collect()
    }

    pub fn forward(&self, g: &mut Graph, post: &PreparedPost) -> Result<Forward, PipelineError> {
        let a = self.config.ablations;
        let store = &self.store;
        let frozen = self.frozen_groups();
        let load = |g: &mut Graph, id: ParamId| {
            if frozen.contains(&store.group(id)) {
                g.frozen_param(store, id)
            } else {
                g.param(store, id)
            }
        };
        let d = self.config.d;

        let adapt = |g: &mut Graph, x: &Tensor, (w, b): (ParamId, ParamId), what| -> Result<NodeId, PipelineError> {
            let (_, width) = x.dims2()?;
            let expected = store.get(w).dims2()?.0;
            if width != expected {
                return Err(PipelineError::Width { what, expected, found: width });
            }
            let x = g.constant(x.clone())?;
            let w = load(g, w)?;
            let b = load(g, b)?;
            Ok(g.linear(x, w, b)?)
        };
        let text = adapt(g, &post.text, self.layout.text_adapter, "text features")?;
        let visual = adapt(g, &post.visual, self.layout.visual_adapter, "visual features")?;

        let opts = BscOptions {
            disable_align: a.disable_align,
            frozen: a.disable_bsc,
        };
        let bsc_out = self.layout.bsc.forward(g, store, text, visual, opts)?;
        let zero = |g: &mut Graph, n: usize| g.constant(Tensor::zeros(vec![1, n]).expect("positive width"));
        let inc = if a.disable_bsc || a.disable_se_i {
            zero(g, 3 * d)?
        } else {
            bsc_out.inconsistency
        };
        let con = if a.disable_bsc || a.disable_se_c {
            zero(g, 3 * d)?
        } else {
            bsc_out.consistency
        };

        let mut parts = vec![inc, con];
        let mut correlations = Vec::new();
        if a.disable_kec {
            for _ in 0..3 {
                parts.push(zero(g, 4 * d)?);
            }
        } else {
            let query = g.concat_cols(&[bsc_out.text_hat, bsc_out.visual_hat])?;
            let kopts = KecOptions {
                disable_relevant: a.disable_e_c,
                disable_irrelevant: a.disable_e_i,
                frozen: false,
            };
            for set in &post.selected {
                let c = kec::entity_correlation(g, store, &self.layout.kec, query, set, kopts)?;
                parts.push(c.output);
                correlations.push(c);
            }
        }
        let features = g.concat_cols(&parts)?;
        let w = load(g, self.layout.classifier.0)?;
        let b = load(g, self.layout.classifier.1)?;
        let (prob, logit) = classify(g, features, w, b)?;
        Ok(Forward {
            prob,
            logit,
            features,
            bsc: bsc_out,
            correlations,
        })
    }

    pub fn predict(&self, post: &PreparedPost) -> Result<f64, PipelineError> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, post).map_err(|e| e.for_post(&post.id))?;
        Ok(g.value(f.prob).data()[0])
    }

    pub fn loss(&self, post: &PreparedPost) -> Result<f64, PipelineError> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, post).map_err(|e| e.for_post(&post.id))?;
        let loss = g.bce(f.prob, post.target)?;
        Ok(g.value(loss).data()[0])
    }

    pub fn loss_and_grad(&self, post: &PreparedPost) -> Result<(f64, Gradients), PipelineError> {
        let mut g = Graph::new();
        let run = |g: &mut Graph| -> Result<(f64, Gradients), PipelineError> {
            let f = self.forward(g, post)?;
            let loss = g.bce(f.prob, post.target)?;
            let grads = g.backward(loss, &self.store)?;
            Ok((g.value(loss).data()[0], grads))
        };
        let (loss, grads) = run(&mut g).map_err(|e| e.for_post(&post.id))?;
        if !loss.is_finite() {
            return Err(PipelineError::NonFiniteLoss { post: post.id.clone() });
        }
        Ok((loss, grads))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            config: self.config.clone(),
            text_dim: self.text_dim,
            visual_dim: self.visual_dim,
            d_max: self.d_max,
            history: self.history.clone(),
            params: self.store.clone(),
        };
        let json = serde_json::to_string(&file).map_err(|e| PipelineError::Config(e.to_string()))?;
        std::fs::write(path, json).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |reason: String| PipelineError::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason,
        };
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(bad(format!("unsupported model format `{}`", file.format)));
        }
        let mut model = Self::new(&file.config, file.text_dim, file.visual_dim, file.d_max)?;
        let fresh = &model.store;
        let same_layout = fresh.len() == file.params.len()
            && fresh.ids().zip(file.params.ids()).all(|(a, b)| {
                fresh.name(a) == file.params.name(b)
                    && fresh.group(a) == file.params.group(b)
                    && fresh.get(a).shape() == file.params.get(b).shape()
            });
        if !same_layout {
            return Err(bad("parameter layout does not match the configuration".into()));
        }
        if file.params.ids().any(|id| !file.params.get(id).is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        model.store = file.params;
        model.history = file.history;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::EntityId;
    use crate::paths::PairCorrelation;

    fn small_config() -> RunConfig {
        RunConfig {
            d: 4,
            d_e: 2,
            atoms: 3,
            heads: 2,
            ..Default::default()
        }
    }

    fn pair(a: u32, b: u32, distance: f64) -> PairCorrelation {
        PairCorrelation {
            first: EntityId(a),
            second: EntityId(b),
            head: vec![0.1 * a as f64, 0.2],
            tail: vec![-0.3, 0.1 * b as f64],
            distance,
            connected: true,
            hops: Some(2),
        }
    }

    pub(crate) fn tiny_post() -> PreparedPost {
        let sel = |pairs: &[PairCorrelation]| SelectedPairs::from_scored(pairs, 3).unwrap();
        PreparedPost {
            id: "p".into(),
            target: 1.0,
            text: glorot_uniform(3, 5, &mut ChaCha8Rng::seed_from_u64(1)),
            visual: glorot_uniform(49, 6, &mut ChaCha8Rng::seed_from_u64(2)),
            selected: [sel(&[pair(0, 1, 0.4)]), sel(&[pair(0, 2, 0.9), pair(1, 2, 0.3)]), sel(&[])],
        }
    }

    #[test]
    fn zero_classifier_gives_half() {
        let mut m = Model::new(&small_config(), 5, 6, 10.0).unwrap();
        let (w, b) = m.layout.classifier;
        m.store.set(w, Tensor::zeros(vec![72, 1]).unwrap()).unwrap();
        m.store.set(b, Tensor::zeros(vec![1, 1]).unwrap()).unwrap();
        assert_eq!(m.predict(&tiny_post()).unwrap(), 0.5);
    }

    #[test]
    fn width_is_fixed_and_probability_interior() {
        let m = Model::new(&small_config(), 5, 6, 10.0).unwrap();
        let mut g = Graph::new();
        let f = m.forward(&mut g, &tiny_post()).unwrap();
        assert_eq!(g.value(f.features).shape(), &[1, 72]);
        let p = g.value(f.prob).data()[0];
        assert!(p > 0.0 && p < 1.0);
        // the empty intra-visual set contributes zeros
        assert!(g.value(f.features).data()[56..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn logit_gradient_is_p_minus_y() {
        let m = Model::new(&small_config(), 5, 6, 10.0).unwrap();
        let post = tiny_post();
        let p = m.predict(&post).unwrap();
        let (_, grads) = m.loss_and_grad(&post).unwrap();
        assert!((grads.get(m.layout.classifier.1).data()[0] - (p - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn ablations_keep_width_and_freeze() {
        let mut cfg = small_config();
        cfg.ablations.disable_kec = true;
        cfg.ablations.disable_bsc = true;
        let m = Model::new(&cfg, 5, 6, 10.0).unwrap();
        let mut g = Graph::new();
        let f = m.forward(&mut g, &tiny_post()).unwrap();
        assert_eq!(g.value(f.features).shape(), &[1, 72]);
        assert!(g.value(f.features).data().iter().all(|x| *x == 0.0));
        let (_, grads) = m.loss_and_grad(&tiny_post()).unwrap();
        for id in m.store.ids() {
            let group = m.store.group(id);
            if group != GROUP_CLASSIFIER {
                assert!(grads.get(id).data().iter().all(|x| *x == 0.0), "{}", m.store.name(id));
            }
        }
        let mask = m.trainable_mask();
        assert!(!mask[m.layout.kec.weight.index()]);
        assert!(mask[m.layout.classifier.0.index()]);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = Model::new(&small_config(), 5, 6, 3.5).unwrap();
        m.history.push(EpochRecord {
            epoch: 1,
            loss: 0.25,
            ..Default::default()
        });
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.store, m.store);
        assert_eq!(back.history, m.history);
        assert_eq!(back.d_max, 3.5);
        assert_eq!(back.predict(&tiny_post()).unwrap(), m.predict(&tiny_post()).unwrap());
    }
}
