//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgfuse::kec::{build_pair_sets, effective_weights, Polarity};
use kgfuse::kg::{EmbeddingTable, EntityId, KnowledgeGraph};
use kgfuse::paths::{
    all_pairs_oracle, path_weights, semantic_distance, Endpoint, PathSearcher, ReasonerConfig,
};
use kgfuse::pipeline::{grad_check, gradcheck_fixture, Ablations};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_graph(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let n = rng.random_range(20..=200);
    let p = rng.random_range(0.01..=0.10);
    let names: Vec<String> = (0..n).map(|i| format!("v{i:03}")).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((names[i].as_str(), "r", names[j].as_str()));
            }
        }
    }
    KnowledgeGraph::from_triples(edges)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut reachable, mut checked) = (0usize, 0usize);
    for _ in 0..50 {
        let g = random_graph(&mut rng);
        let oracle = all_pairs_oracle(&g).map_err(|e| e.to_string())?;
        let mut searcher = PathSearcher::new(&g);
        for u in g.entities() {
            for v in g.entities() {
                let expected = oracle.get(u, v).filter(|h| *h <= 5);
                let found = searcher.search(&g, u, v, 5).map_err(|e| e.to_string())?;
                let got = found.path().map(|p| p.hops() as u32);
                ensure(got == expected, || format!("{u:?}-{v:?}: search {got:?}, oracle {expected:?}"))?;
                if let Some(p) = found.path() {
                    ensure(p.is_valid_in(&g) && p.head() == u && p.tail() == v, || "invalid path".into())?;
                }
                reachable += expected.is_some() as usize;
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{reachable} reachable of {checked} pairs agree, {elapsed:.2?}"))
}

fn weight_law() -> Outcome {
    for m in 0..=5 {
        for end in [Endpoint::Head, Endpoint::Tail] {
            let w = path_weights(m, 0.9, end).map_err(|e| e.to_string())?;
            ensure(w.len() == m + 1 && w.iter().all(|x| *x > 0.0), || format!("m={m}: {w:?}"))?;
            let s: f64 = w.iter().sum();
            ensure((s - 1.0).abs() <= 1e-12, || format!("m={m}: sum {s}"))?;
        }
    }
    let w = path_weights(1, 0.9, Endpoint::Head).map_err(|e| e.to_string())?;
    ensure((w[0] - 10.0 / 19.0).abs() < 5e-13 && (w[1] - 9.0 / 19.0).abs() < 5e-13, || {
        format!("m=1 head {w:?}")
    })?;
    Ok("m in 0..=5 convex, m=1 head = (10/19, 9/19)".into())
}

fn distance_metric() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = loop {
        let g = random_graph(&mut rng);
        if g.len() >= 50 {
            break g;
        }
    };
    let emb = EmbeddingTable::from_rows(
        8,
        (0..g.len()).map(|_| Some((0..8).map(|_| rng.random_range(-1.0..1.0)).collect())).collect(),
    );
    let config = ReasonerConfig {
        d_max: 100.0,
        ..Default::default()
    };
    let ids: Vec<EntityId> = g.entities().collect();
    for _ in 0..1000 {
        let u = ids[rng.random_range(0..ids.len())];
        let v = ids[rng.random_range(0..ids.len())];
        let uv = semantic_distance(u, v, &g, &emb, &config).map_err(|e| e.to_string())?;
        let vu = semantic_distance(v, u, &g, &emb, &config).map_err(|e| e.to_string())?;
        ensure(uv.distance == vu.distance, || format!("asymmetric {u:?} {v:?}"))?;
        let uu = semantic_distance(u, u, &g, &emb, &config).map_err(|e| e.to_string())?;
        ensure(uu.distance == 0.0, || format!("D(u,u) = {}", uu.distance))?;
    }
    let line = KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "r", "c")]);
    let e = EmbeddingTable::from_rows(2, vec![Some(vec![1.0, 0.0]), Some(vec![0.0, 0.0]), Some(vec![0.0, 1.0])]);
    let (a, c) = (line.id("a").unwrap(), line.id("c").unwrap());
    let d = semantic_distance(a, c, &line, &e, &ReasonerConfig::default())
        .map_err(|e| e.to_string())?
        .distance;
    // (1 − α)(1 − α²)√2 / (1 − α³) with α = 0.9
    let expected = 0.1 * 0.19 * 2f64.sqrt() / 0.271;
    ensure((d - expected).abs() < 1e-10 && (d - 0.099_151_504_373_021_42).abs() < 1e-10, || {
        format!("line fixture {d}")
    })?;
    Ok(format!("1000 pairs symmetric with zero self-distance, line fixture {d:.12}"))
}

fn attention_simplex() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let k = rng.random_range(1..=3);
        let scores: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let dists: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..10.0)).collect();
        for pol in [Polarity::Relevant, Polarity::Irrelevant] {
            let w = effective_weights(&scores, &dists, pol).map_err(|e| e.to_string())?;
            let s: f64 = w.iter().sum();
            ensure(w.iter().all(|x| *x >= 0.0) && (s - 1.0).abs() <= 1e-6, || {
                format!("{pol:?} {scores:?} {dists:?} -> {w:?}")
            })?;
            if k == 1 {
                ensure((w[0] - 1.0).abs() < 1e-10, || format!("k=1 gave {w:?}"))?;
            }
        }
    }
    let close = |w: &[f64], e: [f64; 2]| (w[0] - e[0]).abs() < 1e-10 && (w[1] - e[1]).abs() < 1e-10;
    let re = effective_weights(&[0.0, 0.0], &[1.0, 2.0], Polarity::Relevant).map_err(|e| e.to_string())?;
    let ir = effective_weights(&[0.0, 0.0], &[1.0, 3.0], Polarity::Irrelevant).map_err(|e| e.to_string())?;
    ensure(close(&re, [2.0 / 3.0, 1.0 / 3.0]), || format!("relevant (1,2) -> {re:?}"))?;
    ensure(close(&ir, [0.25, 0.75]), || format!("irrelevant (1,3) -> {ir:?}"))?;
    Ok("1000 draws on the simplex, k=1 collapse and reweighting cases exact".into())
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let (model, post) = gradcheck_fixture(Ablations::default()).map_err(|e| e.to_string())?;
    let report = grad_check(&model, &post).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(report.passed && report.max_rel_error < 1e-4, || {
        format!("max relative error {:e}", report.max_rel_error)
    })?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("max relative error {:.2e}, {elapsed:.2?}", report.max_rel_error))
}

fn kgfuse(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_kgfuse"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("kgfuse {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn metric(path: &Path, key: &str) -> Result<f64, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    json[key].as_f64().ok_or_else(|| format!("{} has no `{key}`", path.display()))
}

struct Experiment {
    dir: tempfile::TempDir,
}

impl Experiment {
    fn new() -> Result<Self, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        kgfuse(&["synth", "--out", ".", "--entities", "300", "--posts", "400", "--seed", "42"], dir.path())?;
        Ok(Self { dir })
    }

    fn train(&self, tag: &str, extra: &[&str]) -> Result<(), String> {
        let (model, metrics) = (format!("{tag}.model.json"), format!("{tag}.train.json"));
        let mut args = vec!["train", "--config", "run.conf", "--epochs", "30", "--model", &model, "--metrics", &metrics];
        args.extend_from_slice(extra);
        kgfuse(&args, self.dir.path())
    }

    fn eval(&self, tag: &str) -> Result<(f64, f64), String> {
        let (model, out) = (format!("{tag}.model.json"), format!("{tag}.eval.json"));
        kgfuse(&["eval", "--model", &model, "--split", "test", "--out", &out], self.dir.path())?;
        let path = self.dir.path().join(&out);
        Ok((metric(&path, "accuracy")?, metric(&path, "f1")?))
    }

    fn read(&self, file: &str) -> Result<String, String> {
        std::fs::read_to_string(self.dir.path().join(file)).map_err(|e| e.to_string())
    }
}

fn planted_signal(exp: &Experiment) -> Outcome {
    let start = Instant::now();
    exp.train("full", &[])?;
    let (acc, f1) = exp.eval("full")?;
    let elapsed = start.elapsed();
    exp.train("no_kec", &["--disable", "kec"])?;
    let (acc_kec, _) = exp.eval("no_kec")?;
    exp.train("no_bsc", &["--disable", "bsc"])?;
    let (acc_bsc, _) = exp.eval("no_bsc")?;
    let summary = format!(
        "acc {acc:.4} f1 {f1:.4} in {elapsed:.1?}; disable_kec acc {acc_kec:.4}; disable_bsc acc {acc_bsc:.4}"
    );
    ensure(acc >= 0.90 && f1 >= 0.88, || summary.clone())?;
    ensure(acc_kec < acc && acc_bsc < acc, || summary.clone())?;
    ensure(elapsed < Duration::from_secs(600), || summary.clone())?;
    Ok(summary)
}

fn determinism(exp: &Experiment) -> Outcome {
    exp.train("repeat", &[])?;
    exp.eval("repeat")?;
    for kind in ["train", "eval"] {
        let a = exp.read(&format!("full.{kind}.json"))?;
        let b = exp.read(&format!("repeat.{kind}.json"))?;
        ensure(a == b, || format!("{kind} metrics differ between identical runs"))?;
    }
    let (a, b) = (exp.read("full.model.json")?, exp.read("repeat.model.json")?);
    ensure(a == b, || "model files differ".into())?;
    Ok("repeated seeded run gives byte-identical metrics and model".into())
}

fn pair_counts() -> Outcome {
    for nt in 0..=8u32 {
        for nv in 0..=8u32 {
            let text: Vec<EntityId> = (0..nt).map(EntityId).collect();
            let visual: Vec<EntityId> = (100..100 + nv).map(EntityId).collect();
            let [tt, tv, vv] = build_pair_sets(&text, &visual);
            let (nt, nv) = (nt as usize, nv as usize);
            let got = (tt.len(), tv.len(), vv.len());
            let want = (nt * nt.saturating_sub(1) / 2, nt * nv, nv * nv.saturating_sub(1) / 2);
            ensure(got == want, || format!("N_T={nt} N_V={nv}: {got:?} != {want:?}"))?;
        }
    }
    Ok("all 81 (N_T, N_V) combinations match".into())
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match outcome {
            Ok(detail) => println!("PASS {n} {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {n} {name}: {detail}");
            }
        }
    };
    report(1, "path oracle equivalence", oracle_equivalence());
    report(2, "decay weight law", weight_law());
    report(3, "distance metric", distance_metric());
    report(4, "signed attention simplex", attention_simplex());
    report(5, "gradient integrity", gradient_integrity());
    match Experiment::new() {
        Ok(exp) => {
            report(6, "planted-signal separability", planted_signal(&exp));
            report(7, "determinism", determinism(&exp));
        }
        Err(e) => {
            report(6, "planted-signal separability", Err(e.clone()));
            report(7, "determinism", Err(e));
        }
    }
    report(8, "pair-set combinatorics", pair_counts());
    if failures > 0 {
        std::process::exit(1);
    }
}
