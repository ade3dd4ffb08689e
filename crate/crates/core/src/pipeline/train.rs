//! Precomputation, the training loop, evaluation and the pair dump.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::kec::{build_pair_sets, select_topk, PairKind, SelectedPairs};
use crate::kg::{load_graph, KnowledgeBase};
use crate::nn::{AdamConfig, AdamState, Gradients, Graph};
use crate::paths::{calibrate_d_max, PairCorrelation, PairScorer, ReasonerConfig, ScoringMode};

use super::config::RunConfig;
use super::data::{read_posts, resolve_entities, Post, Split, SplitPart};
use super::metrics::Metrics;
use super::model::{EpochRecord, Model, PreparedPost};
use super::PipelineError;

/// Knowledge base plus posts.
#[derive(Debug)]
pub struct Dataset {
    pub kb: KnowledgeBase,
    pub posts: Vec<Post>,
}

impl Dataset {
    pub fn load(config: &RunConfig) -> Result<Self, PipelineError> {
        let need = |p: &Option<std::path::PathBuf>, key: &str| {
            p.clone()
                .ok_or_else(|| PipelineError::Config(format!("`{key}` path is not set")))
        };
        let kb = load_graph(&need(&config.kg, "kg")?, &need(&config.embeddings, "embeddings")?)?;
        let posts = read_posts(&need(&config.posts, "posts")?)?;
        Ok(Self { kb, posts })
    }
}

/// Posts ready for the forward pass, with their full scored pair sets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub posts: Vec<PreparedPost>,
    /// All scored pairs per post, in pair-set order.
    pub scored: Vec<[Vec<PairCorrelation>; 3]>,
    pub text_dim: usize,
    pub visual_dim: usize,
    pub dropped_entities: usize,
    pub d_max: f64,
}

/// Resolves entities, scores every pair once, and selects the top-k subsets.
pub fn prepare_posts(data: &Dataset, config: &RunConfig, d_max: f64) -> Result<Prepared, PipelineError> {
    let graph = &data.kb.graph;
    let embeddings = &data.kb.embeddings;
    if embeddings.dim() != config.d_e {
        return Err(PipelineError::Config(format!(
            "embeddings have width {} but d_e = {}",
            embeddings.dim(),
            config.d_e
        )));
    }
    if data.posts.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let reasoner = ReasonerConfig {
        hop_cap: config.hop_cap,
        alpha: config.alpha,
        d_max,
        mode: if config.ablations.disable_path {
            ScoringMode::Direct
        } else {
            ScoringMode::Path
        },
    };
    let scorer = PairScorer::new(graph, embeddings, reasoner);
    type One = (PreparedPost, [Vec<PairCorrelation>; 3], usize);
    let results: Vec<Result<One, PipelineError>> = data
        .posts
        .par_iter()
        .map_init(
            || scorer.new_searcher(),
            |searcher, post| {
                let (text, visual) = post.features(config.raw_dim)?;
                let (t_ids, t_drop) = resolve_entities(&post.id, &post.text_entities, graph, embeddings);
                let (v_ids, v_drop) = resolve_entities(&post.id, &post.visual_entities, graph, embeddings);
                let sets = build_pair_sets(&t_ids, &v_ids);
                let mut scored: [Vec<PairCorrelation>; 3] = Default::default();
                let mut selected: [SelectedPairs; 3] = std::array::from_fn(|_| SelectedPairs {
                    relevant: Vec::new(),
                    irrelevant: Vec::new(),
                });
                for (i, set) in sets.iter().enumerate() {
                    scored[i] = set
                        .pairs
                        .iter()
                        .map(|&(a, b)| scorer.score(searcher, a, b))
                        .collect::<Result<_, _>>()?;
                    selected[i] = SelectedPairs::from_scored(&scored[i], config.top_k)?;
                }
                let prepared = PreparedPost {
                    id: post.id.clone(),
                    target: post.target(),
                    text,
                    visual,
                    selected,
                };
                Ok((prepared, scored, t_drop + v_drop))
            },
        )
        .collect();

    let mut out = Prepared {
        posts: Vec::with_capacity(results.len()),
        scored: Vec::with_capacity(results.len()),
        text_dim: 0,
        visual_dim: 0,
        dropped_entities: 0,
        d_max,
    };
    for r in results {
        let (post, scored, dropped) = r?;
        let (t, v) = (post.text.dims2()?.1, post.visual.dims2()?.1);
        if out.posts.is_empty() {
            out.text_dim = t;
            out.visual_dim = v;
        } else if (t, v) != (out.text_dim, out.visual_dim) {
            return Err(PipelineError::Post {
                id: post.id,
                reason: format!(
                    "feature widths ({t}, {v}) differ from the dataset's ({}, {})",
                    out.text_dim, out.visual_dim
                ),
            });
        }
        out.dropped_entities += dropped;
        out.posts.push(post);
        out.scored.push(scored);
    }
    log::info!(
        "prepared {} posts, {} distinct pairs scored, {} entity mentions dropped",
        out.posts.len(),
        scorer.cached_pairs(),
        out.dropped_entities
    );
    Ok(out)
}

/// Metrics JSON written by `train` and `eval`.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub split: SplitPart,
    pub posts: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub epoch_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub d_max: f64,
    pub dropped_entities: usize,
    pub config: RunConfig,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub prepared: Prepared,
    pub split: Split,
}

pub fn evaluate(model: &Model, posts: &[&PreparedPost]) -> Result<Metrics, PipelineError> {
    if posts.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let probs = posts.par_iter().map(|p| model.predict(p)).collect::<Result<Vec<_>, _>>()?;
    let targets: Vec<f64> = posts.iter().map(|p| p.target).collect();
    Metrics::from_predictions(&probs, &targets)
}

impl EvalReport {
    pub fn new(model: &Model, prepared: &Prepared, split: &Split, part: SplitPart) -> Result<Self, PipelineError> {
        let idx = split.part(part);
        let posts: Vec<&PreparedPost> = idx.iter().map(|&i| &prepared.posts[i]).collect();
        let metrics = evaluate(model, &posts)?;
        Ok(Self {
            split: part,
            posts: posts.len(),
            metrics,
            epoch_losses: model.history.iter().map(|e| e.loss).collect(),
            epochs: model.history.clone(),
            d_max: model.d_max,
            dropped_entities: prepared.dropped_entities,
            config: model.config.clone(),
        })
    }
}

/// Calibrates `D_max`, precomputes pair correlations, and trains with
/// mini-batch Adam on the training split.
pub fn train(config: &RunConfig, data: &Dataset) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    let d_max = calibrate_d_max(
        &data.kb.graph,
        &data.kb.embeddings,
        config.hop_cap,
        config.alpha,
        config.d_max_samples,
        config.d_max_factor,
        config.seed,
    )?;
    log::info!("D_max = {d_max}");
    let prepared = prepare_posts(data, config, d_max)?;
    let split = Split::new(prepared.posts.len(), config.seed);
    let mut model = Model::new(config, prepared.text_dim, prepared.visual_dim, d_max)?;
    let train_set = if split.train.is_empty() {
        split.part(SplitPart::All)
    } else {
        split.train.clone()
    };
    fit(&mut model, &prepared, &train_set, &split.validation)?;
    Ok(TrainOutcome { model, prepared, split })
}

/// Runs `config.epochs` epochs over `train_idx`, appending to the model history.
pub(crate) fn fit(model: &mut Model, prepared: &Prepared, train_idx: &[usize], val_idx: &[usize]) -> Result<(), PipelineError> {
    let config = model.config.clone();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let mask = model.trainable_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut order = train_idx.to_vec();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let m = &*model;
            let results: Vec<Result<(f64, Gradients), PipelineError>> =
                batch.par_iter().map(|&i| m.loss_and_grad(&prepared.posts[i])).collect();
            let mut sum = Gradients::zeros_like(&model.store);
            for r in results {
                let (loss, grads) = r?;
                total += loss;
                sum.add_assign(&grads)?;
            }
            sum.scale(1.0 / batch.len() as f64);
            adam.step_masked(&mut model.store, &sum, &mask)?;
        }
        let loss = total / order.len() as f64;
        let (validation_accuracy, validation_f1) = if val_idx.is_empty() {
            (None, None)
        } else {
            let posts: Vec<&PreparedPost> = val_idx.iter().map(|&i| &prepared.posts[i]).collect();
            let m = evaluate(model, &posts)?;
            (Some(m.accuracy), Some(m.f1))
        };
        log::info!(
            "epoch {epoch}: loss {loss:.5}{}",
            validation_accuracy.map(|a| format!(", validation accuracy {a:.4}")).unwrap_or_default()
        );
        model.history.push(EpochRecord {
            epoch,
            loss,
            validation_accuracy,
            validation_f1,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PairDump {
    pub first: String,
    pub second: String,
    pub distance: f64,
    pub hops: Option<usize>,
    pub connected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SetDump {
    pub kind: PairKind,
    pub pairs: Vec<PairDump>,
    /// Indices into `pairs`, ascending distance.
    pub relevant: Vec<usize>,
    /// Indices into `pairs`, descending distance.
    pub irrelevant: Vec<usize>,
    pub relevant_weights: Vec<f64>,
    pub irrelevant_weights: Vec<f64>,
    /// Raw negative attention coefficients of the irrelevant subset.
    pub negative_attention: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairDumpRecord {
    pub id: String,
    pub sets: Vec<SetDump>,
}

/// Per-post pair sets, distances, selections and attention weights.
pub fn pair_dump(
    model: &Model,
    prepared: &Prepared,
    kb: &KnowledgeBase,
    indices: &[usize],
) -> Result<Vec<PairDumpRecord>, PipelineError> {
    const KINDS: [PairKind; 3] = [PairKind::TT, PairKind::TV, PairKind::VV];
    let name = |id| kb.graph.name(id).to_string();
    indices
        .iter()
        .map(|&i| {
            let post = &prepared.posts[i];
            let mut g = Graph::new();
            let fwd = model.forward(&mut g, post)?;
            let mut sets = Vec::new();
            for (s, scored) in prepared.scored[i].iter().enumerate() {
                let top = select_topk(scored, model.config.top_k)?;
                let corr = fwd.correlations.get(s);
                let values = |n: Option<crate::nn::NodeId>| n.map(|n| g.value(n).data().to_vec()).unwrap_or_default();
                sets.push(SetDump {
                    kind: KINDS[s],
                    pairs: scored
                        .iter()
                        .map(|p| PairDump {
                            first: name(p.first),
                            second: name(p.second),
                            distance: p.distance,
                            hops: p.hops,
                            connected: p.connected,
                        })
                        .collect(),
                    relevant: top.relevant,
                    irrelevant: top.irrelevant,
                    relevant_weights: values(corr.and_then(|c| c.relevant).map(|a| a.weights)),
                    irrelevant_weights: values(corr.and_then(|c| c.irrelevant).map(|a| a.weights)),
                    negative_attention: values(corr.and_then(|c| c.irrelevant).map(|a| a.lambda)),
                });
            }
            Ok(PairDumpRecord {
                id: post.id.clone(),
                sets,
            })
        })
        .collect()
}
