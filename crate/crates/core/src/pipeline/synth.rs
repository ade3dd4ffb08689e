//! Planted-signal synthetic datasets.
//!
//! The graph has `C` dense communities. Communities are linked only through
//! dedicated hub entities, each attached to members of exactly two
//! communities; hub embeddings share a common offset, so paths that cross
//! communities carry a recognisable component. Member embeddings are a
//! community centroid plus small noise.
//!
//! Non-rumor posts take all entities from one community and both feature
//! sequences from one latent topic. Rumor posts plant entity inconsistency
//! (text and visual entities from different communities), feature
//! inconsistency (different topics per modality), or both, in fixed
//! proportions so that each branch of the model carries information the
//! other lacks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::config::RunConfig;
use super::data::{write_posts, Post, LABEL_NON_RUMOR, LABEL_RUMOR, VISUAL_LEN};
use super::PipelineError;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub entities: usize,
    pub communities: usize,
    pub posts: usize,
    pub seed: u64,
    pub d_e: usize,
    pub raw_dim: usize,
    pub topics: usize,
    pub hubs_per_link: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            entities: 300,
            communities: 4,
            posts: 400,
            seed: 42,
            d_e: 50,
            raw_dim: 32,
            topics: 6,
            hubs_per_link: 2,
        }
    }
}

const MIN_COMMUNITY: usize = 8;
const MEAN_INTRA_DEGREE: f64 = 10.0;
const MEMBER_NOISE: f64 = 0.3;
const HUB_OFFSET: f64 = 2.0;
const TOPIC_SCALE: f64 = 3.0;
const FEATURE_NOISE: f64 = 1.0;
const RELATIONS: usize = 4;
const DIGITS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    NonRumor,
    Both,
    FeatureOnly,
    EntityOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub triples: Vec<(String, String, String)>,
    /// Sorted by name.
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub posts: Vec<Post>,
    /// Member names per community.
    pub communities: Vec<Vec<String>>,
    pub hubs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFiles {
    pub kg: PathBuf,
    pub embeddings: PathBuf,
    pub posts: PathBuf,
    pub config: PathBuf,
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthDataset, PipelineError> {
    let c = cfg.communities;
    if c < 2 {
        return Err(PipelineError::Synth("need at least 2 communities".into()));
    }
    if cfg.topics < 2 || cfg.posts < 2 || cfg.d_e == 0 || cfg.raw_dim == 0 || cfg.hubs_per_link == 0 {
        return Err(PipelineError::Synth(
            "topics and posts must be at least 2; widths and hubs_per_link positive".into(),
        ));
    }
    let links = c * (c - 1) / 2;
    let n_hubs = links * cfg.hubs_per_link;
    let members = cfg.entities.saturating_sub(n_hubs);
    if members < c * MIN_COMMUNITY || members / c >= 10usize.pow(DIGITS as u32) {
        return Err(PipelineError::Synth(format!(
            "{} entities cannot form {c} communities of at least {MIN_COMMUNITY} members plus {n_hubs} hubs",
            cfg.entities
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let communities: Vec<Vec<String>> = (0..c)
        .map(|k| {
            let size = members / c + usize::from(k < members % c);
            (0..size).map(|i| format!("c{k}_e{i:0DIGITS$}")).collect()
        })
        .collect();
    let hubs: Vec<String> = (0..n_hubs).map(|j| format!("hub_{j:03}")).collect();

    let mut triples = Vec::new();
    let mut edge = |rng: &mut ChaCha8Rng, a: &str, b: &str| {
        let rel = format!("rel_{}", rng.random_range(0..RELATIONS));
        triples.push((a.to_string(), rel, b.to_string()));
    };
    for names in &communities {
        let s = names.len();
        let p = (MEAN_INTRA_DEGREE / (s - 1) as f64).min(1.0);
        for i in 0..s {
            edge(&mut rng, &names[i], &names[(i + 1) % s]);
            for j in i + 2..s {
                if rng.random_bool(p) {
                    edge(&mut rng, &names[i], &names[j]);
                }
            }
        }
    }
    let mut hub_ends = Vec::new();
    let mut h = 0;
    for a in 0..c {
        for b in a + 1..c {
            for _ in 0..cfg.hubs_per_link {
                for side in [a, b] {
                    let names = &communities[side];
                    let attach = (names.len() / 7).max(3);
                    for m in names.choose_multiple(&mut rng, attach) {
                        edge(&mut rng, &hubs[h], m);
                    }
                }
                hub_ends.push((a, b));
                h += 1;
            }
        }
    }

    let centroids: Vec<Vec<f64>> = (0..c).map(|_| gaussian(&mut rng, cfg.d_e, 1.0)).collect();
    let marker = gaussian(&mut rng, cfg.d_e, HUB_OFFSET);
    let mut embeddings = Vec::new();
    for (k, names) in communities.iter().enumerate() {
        for name in names {
            let noise = gaussian(&mut rng, cfg.d_e, MEMBER_NOISE);
            let v = centroids[k].iter().zip(&noise).map(|(c, n)| c + n).collect();
            embeddings.push((name.clone(), v));
        }
    }
    for (name, &(a, b)) in hubs.iter().zip(&hub_ends) {
        let noise = gaussian(&mut rng, cfg.d_e, MEMBER_NOISE);
        let v = (0..cfg.d_e)
            .map(|i| 0.5 * (centroids[a][i] + centroids[b][i]) + marker[i] + noise[i])
            .collect();
        embeddings.push((name.clone(), v));
    }
    embeddings.sort_by(|x, y| x.0.cmp(&y.0));

    // topic prototypes are scaled unit vectors seen through per-modality mixing
    let topic_map = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..cfg.raw_dim)
            .map(|_| gaussian(rng, cfg.topics, 1.0 / (cfg.topics as f64).sqrt()))
            .collect()
    };
    let text_map = topic_map(&mut rng);
    let visual_map = topic_map(&mut rng);
    let noise = Normal::new(0.0, FEATURE_NOISE).expect("positive sd");
    let features = |rng: &mut ChaCha8Rng, map: &[Vec<f64>], topic: usize, rows: usize| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| {
                map.iter()
                    .map(|row| round4(TOPIC_SCALE * row[topic] + noise.sample(rng)))
                    .collect()
            })
            .collect()
    };

    let n_rumor = cfg.posts / 2;
    let n_both = (n_rumor as f64 * 0.4).round() as usize;
    let n_feature = (n_rumor as f64 * 0.3).round() as usize;
    let mut kinds = vec![Kind::NonRumor; cfg.posts - n_rumor];
    kinds.extend(std::iter::repeat_n(Kind::Both, n_both));
    kinds.extend(std::iter::repeat_n(Kind::FeatureOnly, n_feature));
    kinds.extend(std::iter::repeat_n(Kind::EntityOnly, n_rumor - n_both - n_feature));
    kinds.shuffle(&mut rng);

    let other = |rng: &mut ChaCha8Rng, n: usize, not: usize| (not + rng.random_range(1..n)) % n;
    let mut posts = Vec::with_capacity(cfg.posts);
    for (i, kind) in kinds.into_iter().enumerate() {
        let entity_split = matches!(kind, Kind::Both | Kind::EntityOnly);
        let feature_split = matches!(kind, Kind::Both | Kind::FeatureOnly);
        let text_comm = rng.random_range(0..c);
        let visual_comm = if entity_split { other(&mut rng, c, text_comm) } else { text_comm };
        let n_t = rng.random_range(2..=3);
        let n_v = rng.random_range(2..=3);
        let (text_entities, visual_entities) = if entity_split {
            let t: Vec<String> = communities[text_comm].choose_multiple(&mut rng, n_t).cloned().collect();
            let v: Vec<String> = communities[visual_comm].choose_multiple(&mut rng, n_v).cloned().collect();
            (t, v)
        } else {
            let mut all: Vec<String> = communities[text_comm].choose_multiple(&mut rng, n_t + n_v).cloned().collect();
            let v = all.split_off(n_t);
            (all, v)
        };
        let text_topic = rng.random_range(0..cfg.topics);
        let visual_topic = if feature_split {
            other(&mut rng, cfg.topics, text_topic)
        } else {
            text_topic
        };
        let len = rng.random_range(8..=24);
        let text_features = features(&mut rng, &text_map, text_topic, len);
        let visual_features = features(&mut rng, &visual_map, visual_topic, VISUAL_LEN);
        posts.push(Post {
            id: format!("post_{i:04}"),
            label: if kind == Kind::NonRumor { LABEL_NON_RUMOR } else { LABEL_RUMOR },
            text_entities,
            visual_entities,
            text_features: Some(text_features),
            visual_features: Some(visual_features),
            feature_seed: None,
        });
    }

    Ok(SynthDataset {
        triples,
        embeddings,
        posts,
        communities,
        hubs,
    })
}

/// Writes `kg.tsv`, `embeddings.txt`, `posts.jsonl` and `run.conf` into `dir`.
pub fn write_synthetic(data: &SynthDataset, cfg: &SynthConfig, dir: &Path) -> Result<SynthFiles, PipelineError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let files = SynthFiles {
        kg: dir.join("kg.tsv"),
        embeddings: dir.join("embeddings.txt"),
        posts: dir.join("posts.jsonl"),
        config: dir.join("run.conf"),
    };

    let mut kg = String::new();
    for (h, r, t) in &data.triples {
        let _ = writeln!(kg, "{h}\t{r}\t{t}");
    }
    std::fs::write(&files.kg, kg).map_err(io(&files.kg))?;

    let mut emb = format!("{} {}\n", data.embeddings.len(), cfg.d_e);
    for (name, v) in &data.embeddings {
        emb.push_str(name);
        for x in v {
            let _ = write!(emb, " {x:.5}");
        }
        emb.push('\n');
    }
    std::fs::write(&files.embeddings, emb).map_err(io(&files.embeddings))?;

    let mut buf = Vec::new();
    write_posts(&data.posts, &mut buf)?;
    std::fs::write(&files.posts, buf).map_err(io(&files.posts))?;

    let run = RunConfig {
        kg: Some("kg.tsv".into()),
        embeddings: Some("embeddings.txt".into()),
        posts: Some("posts.jsonl".into()),
        d_e: cfg.d_e,
        raw_dim: cfg.raw_dim,
        seed: cfg.seed,
        ..RunConfig::default()
    };
    std::fs::write(&files.config, run.to_file_string()).map_err(io(&files.config))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            entities: 60,
            communities: 3,
            posts: 21,
            d_e: 6,
            raw_dim: 5,
            ..Default::default()
        }
    }

    #[test]
    fn sizes_and_balance() {
        let d = generate_synthetic(&small()).unwrap();
        assert_eq!(d.embeddings.len(), 60);
        assert_eq!(d.hubs.len(), 6);
        assert_eq!(d.communities.iter().map(Vec::len).sum::<usize>(), 54);
        let rumors = d.posts.iter().filter(|p| p.is_rumor()).count();
        assert!((rumors as i64 - (21 - rumors) as i64).abs() <= 1);
        for p in &d.posts {
            assert_eq!(p.visual_features.as_ref().unwrap().len(), VISUAL_LEN);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_synthetic(&small()).unwrap(), generate_synthetic(&small()).unwrap());
        let other = SynthConfig { seed: 7, ..small() };
        assert_ne!(generate_synthetic(&small()).unwrap().posts, generate_synthetic(&other).unwrap().posts);
    }

    #[test]
    fn rejects_tiny_sizes() {
        for cfg in [
            SynthConfig { entities: 20, ..small() },
            SynthConfig { communities: 1, ..small() },
            SynthConfig { posts: 1, ..small() },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(PipelineError::Synth(_))));
        }
    }

    #[test]
    fn non_rumors_stay_in_one_community() {
        let d = generate_synthetic(&small()).unwrap();
        let community = |name: &str| name.split('_').next().unwrap().to_string();
        for p in d.posts.iter().filter(|p| !p.is_rumor()) {
            let first = community(&p.text_entities[0]);
            assert!(p.text_entities.iter().chain(&p.visual_entities).all(|e| community(e) == first));
        }
    }
}
