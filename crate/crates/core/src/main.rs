use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use kgfuse::kg::load_graph;
use kgfuse::paths::{
    calibrate_d_max, path_weights, semantic_distance, shortest_path, Endpoint, ReasonerConfig, ScoringMode,
};
use kgfuse::pipeline::{
    generate_synthetic, grad_check, gradcheck_fixture, pair_dump, prepare_posts, train, write_synthetic, Ablations,
    Dataset, EvalReport, Model, RunConfig, Split, SplitPart, SynthConfig,
};

#[derive(Parser)]
#[command(name = "kgfuse", version, about = "Knowledge-graph enhanced multi-modal rumor detection")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-signal synthetic dataset.
    Synth(SynthArgs),
    /// Train a model and write it with its held-out metrics.
    Train(TrainArgs),
    /// Evaluate a saved model on one split of a dataset.
    Eval(EvalArgs),
    /// Show the shortest semantic path and distance between two entities.
    Paths(PathsArgs),
    /// Compare analytic and finite-difference gradients on a tiny fixture.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    entities: usize,
    #[arg(long, default_value_t = 4)]
    communities: usize,
    #[arg(long, default_value_t = 400)]
    posts: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    d_e: usize,
    #[arg(long, default_value_t = 32)]
    raw_dim: usize,
}

#[derive(Args)]
struct Overrides {
    /// Override a config key, e.g. `--set lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ablate a branch: bsc, kec, align, se_i, se_c, e_i, e_c, path.
    #[arg(long = "disable", value_name = "BRANCH")]
    disable: Vec<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("`{kv}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim(), None)?;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        for branch in &self.disable {
            cfg.set(&format!("disable_{branch}"), "true", None)
                .with_context(|| format!("unknown branch `{branch}`"))?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` run configuration.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Where to write the trained model.
    #[arg(long)]
    model: PathBuf,
    /// Where to write test-split metrics (stdout if omitted).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Write per-post pair sets and attention weights as JSON Lines.
    #[arg(long)]
    dump_pairs: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Posts file; defaults to the one the model was trained on.
    #[arg(long)]
    posts: Option<PathBuf>,
    #[arg(long)]
    kg: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// train, validation, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Where to write metrics (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_pairs: Option<PathBuf>,
}

#[derive(Args)]
struct PathsArgs {
    #[arg(long)]
    kg: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    first: String,
    second: String,
    #[arg(long, default_value_t = 5)]
    hop_cap: usize,
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    /// Distance for unreachable pairs; calibrated from the graph if omitted.
    #[arg(long)]
    d_max: Option<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long = "disable", value_name = "BRANCH")]
    disable: Vec<String>,
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_split(s: &str) -> Result<SplitPart> {
    Ok(match s {
        "train" => SplitPart::Train,
        "validation" | "val" => SplitPart::Validation,
        "test" => SplitPart::Test,
        "all" => SplitPart::All,
        _ => bail!("unknown split `{s}` (train, validation, test, all)"),
    })
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        entities: a.entities,
        communities: a.communities,
        posts: a.posts,
        seed: a.seed,
        d_e: a.d_e,
        raw_dim: a.raw_dim,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg)?;
    let files = write_synthetic(&data, &cfg, &a.out)?;
    eprintln!(
        "wrote {} entities, {} edges, {} posts; config at {}",
        data.embeddings.len(),
        data.triples.len(),
        data.posts.len(),
        files.config.display()
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    a.overrides.apply(&mut cfg)?;
    cfg.validate()?;
    let data = Dataset::load(&cfg)?;
    let outcome = train(&cfg, &data)?;
    outcome.model.save(&a.model)?;
    let report = EvalReport::new(&outcome.model, &outcome.prepared, &outcome.split, SplitPart::Test)?;
    write_json(&report, a.metrics.as_deref())?;
    if let Some(path) = a.dump_pairs {
        let dump = pair_dump(&outcome.model, &outcome.prepared, &data.kb, &outcome.split.part(SplitPart::All))?;
        write_jsonl(&dump, &path)?;
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let mut cfg = model.config.clone();
    if a.posts.is_some() {
        cfg.posts = a.posts;
    }
    if a.kg.is_some() {
        cfg.kg = a.kg;
    }
    if a.embeddings.is_some() {
        cfg.embeddings = a.embeddings;
    }
    let part = parse_split(&a.split)?;
    let data = Dataset::load(&cfg)?;
    let prepared = prepare_posts(&data, &cfg, model.d_max)?;
    if (prepared.text_dim, prepared.visual_dim) != (model.text_dim, model.visual_dim) {
        bail!(
            "dataset feature widths ({}, {}) do not match the model's ({}, {})",
            prepared.text_dim,
            prepared.visual_dim,
            model.text_dim,
            model.visual_dim
        );
    }
    let split = Split::new(prepared.posts.len(), cfg.seed);
    let report = EvalReport::new(&model, &prepared, &split, part)?;
    write_json(&report, a.out.as_deref())?;
    if let Some(path) = a.dump_pairs {
        let dump = pair_dump(&model, &prepared, &data.kb, &split.part(part))?;
        write_jsonl(&dump, &path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PathReport {
    first: String,
    second: String,
    connected: bool,
    hops: Option<usize>,
    path: Vec<String>,
    head_weights: Vec<f64>,
    tail_weights: Vec<f64>,
    distance: f64,
    d_max: f64,
}

fn run_paths(a: PathsArgs) -> Result<()> {
    let kb = load_graph(&a.kg, &a.embeddings)?;
    let id = |name: &str| kb.graph.id(name).with_context(|| format!("unknown entity `{name}`"));
    let (u, v) = (id(&a.first)?, id(&a.second)?);
    let d_max = match a.d_max {
        Some(d) => d,
        None => calibrate_d_max(&kb.graph, &kb.embeddings, a.hop_cap, a.alpha, 2000, 10.0, 0)?,
    };
    let config = ReasonerConfig {
        hop_cap: a.hop_cap,
        alpha: a.alpha,
        d_max,
        mode: ScoringMode::Path,
    };
    let outcome = shortest_path(&kb.graph, u, v, a.hop_cap)?;
    let pc = semantic_distance(u, v, &kb.graph, &kb.embeddings, &config)?;
    let (path, head_weights, tail_weights) = match outcome.path() {
        Some(p) => (
            p.nodes().iter().map(|n| kb.graph.name(*n).to_string()).collect(),
            path_weights(p.hops(), a.alpha, Endpoint::Head)?,
            path_weights(p.hops(), a.alpha, Endpoint::Tail)?,
        ),
        None => (Vec::new(), Vec::new(), Vec::new()),
    };
    write_json(
        &PathReport {
            first: a.first,
            second: a.second,
            connected: pc.connected,
            hops: outcome.path().map(|p| p.hops()),
            path,
            head_weights,
            tail_weights,
            distance: pc.distance,
            d_max,
        },
        None,
    )
}

fn run_gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    for branch in &a.disable {
        cfg.set(&format!("disable_{branch}"), "true", None)
            .with_context(|| format!("unknown branch `{branch}`"))?;
    }
    let ablations: Ablations = cfg.ablations;
    let (model, post) = gradcheck_fixture(ablations)?;
    let report = grad_check(&model, &post)?;
    if !report.passed {
        eprintln!("gradient check failed: max relative error {:e}", report.max_rel_error);
    }
    write_json(&report, None)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Paths(a) => run_paths(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
