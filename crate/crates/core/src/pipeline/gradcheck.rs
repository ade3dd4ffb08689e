//! Finite-difference verification of the full-pipeline gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::kec::{build_pair_sets, SelectedPairs};
use crate::kg::{EmbeddingTable, KnowledgeGraph};
use crate::nn::glorot_uniform;
use crate::paths::{calibrate_d_max, PairScorer, ReasonerConfig, ScoringMode};

use super::config::{Ablations, RunConfig};
use super::model::{Model, PreparedPost};
use super::PipelineError;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub group: String,
    pub coordinates: usize,
    /// Frozen groups are not compared; their analytic gradient must be zero.
    pub frozen: bool,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_abs_grad: f64,
    pub all_zero: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub step: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub groups: Vec<GroupCheck>,
    pub passed: bool,
}

/// One post over a 6-node graph with tiny widths.
pub fn gradcheck_fixture(ablations: Ablations) -> Result<(Model, PreparedPost), PipelineError> {
    let names = ["n0", "n1", "n2", "n3", "n4", "n5"];
    let graph = KnowledgeGraph::from_triples(
        [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)].map(|(a, b)| (names[a], "r", names[b])),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d_e = 3;
    let embeddings = EmbeddingTable::from_rows(
        d_e,
        (0..names.len())
            .map(|_| Some((0..d_e).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect(),
    );
    let config = RunConfig {
        d: 4,
        d_e,
        atoms: 3,
        heads: 2,
        top_k: 2,
        seed: 11,
        ablations,
        ..RunConfig::default()
    };
    let d_max = calibrate_d_max(&graph, &embeddings, config.hop_cap, config.alpha, 50, 10.0, 1)?;
    let scorer = PairScorer::new(
        &graph,
        &embeddings,
        ReasonerConfig {
            hop_cap: config.hop_cap,
            alpha: config.alpha,
            d_max,
            mode: if ablations.disable_path { ScoringMode::Direct } else { ScoringMode::Path },
        },
    );
    let ids = |xs: &[&str]| xs.iter().map(|n| graph.id(n).expect("fixture entity")).collect::<Vec<_>>();
    let sets = build_pair_sets(&ids(&["n0", "n2", "n5"]), &ids(&["n1", "n3"]));
    let mut searcher = scorer.new_searcher();
    let mut selected = Vec::new();
    for set in &sets {
        let scored = set
            .pairs
            .iter()
            .map(|&(a, b)| scorer.score(&mut searcher, a, b))
            .collect::<Result<Vec<_>, _>>()?;
        selected.push(SelectedPairs::from_scored(&scored, config.top_k)?);
    }
    let post = PreparedPost {
        id: "fixture".into(),
        target: 1.0,
        text: glorot_uniform(4, 3, &mut rng),
        visual: glorot_uniform(49, 3, &mut rng),
        selected: selected.try_into().expect("three pair sets"),
    };
    let model = Model::new(&config, 3, 3, d_max)?;
    Ok((model, post))
}

fn nudge(model: &mut Model, id: crate::nn::ParamId, coord: usize, delta: f64) {
    model.store.get_mut(id).data_mut()[coord] += delta;
}

/// Compares reverse-mode gradients of the loss on `post` with central
/// differences for every coordinate of every trainable parameter.
pub fn grad_check(model: &Model, post: &PreparedPost) -> Result<GradCheckReport, PipelineError> {
    let (loss, grads) = model.loss_and_grad(post)?;
    let mask = model.trainable_mask();
    let mut probe = model.clone();
    let mut groups: Vec<GroupCheck> = Vec::new();
    for id in model.store.ids() {
        let group = model.store.group(id).to_string();
        let idx = match groups.iter().position(|g| g.group == group) {
            Some(i) => i,
            None => {
                groups.push(GroupCheck {
                    group: group.clone(),
                    coordinates: 0,
                    frozen: !mask[id.index()],
                    max_rel_error: 0.0,
                    max_abs_error: 0.0,
                    max_abs_grad: 0.0,
                    all_zero: true,
                });
                groups.len() - 1
            }
        };
        let entry = &mut groups[idx];
        let analytic: Vec<f64> = grads.get(id).data().to_vec();
        entry.all_zero &= analytic.iter().all(|g| *g == 0.0);
        entry.max_abs_grad = analytic.iter().fold(entry.max_abs_grad, |m, g| m.max(g.abs()));
        if entry.frozen {
            continue;
        }
        for (coord, a) in analytic.iter().enumerate() {
            nudge(&mut probe, id, coord, GRADCHECK_STEP);
            let up = probe.loss(post)?;
            nudge(&mut probe, id, coord, -2.0 * GRADCHECK_STEP);
            let down = probe.loss(post)?;
            probe.store.get_mut(id).data_mut()[coord] = model.store.get(id).data()[coord];
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            entry.coordinates += 1;
            entry.max_abs_error = entry.max_abs_error.max(abs);
            entry.max_rel_error = entry.max_rel_error.max(rel);
        }
    }
    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    let passed = max_rel_error < GRADCHECK_TOLERANCE && groups.iter().all(|g| !g.frozen || g.all_zero);
    Ok(GradCheckReport {
        loss,
        step: GRADCHECK_STEP,
        tolerance: GRADCHECK_TOLERANCE,
        max_rel_error,
        groups,
        passed,
    })
}
