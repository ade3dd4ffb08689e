//! Run configuration and its `key = value` file format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Ablation switches. Each one zeroes a representation and freezes the
/// parameters that only feed it; widths never change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub disable_bsc: bool,
    pub disable_kec: bool,
    pub disable_align: bool,
    pub disable_se_i: bool,
    pub disable_se_c: bool,
    pub disable_e_i: bool,
    pub disable_e_c: bool,
    pub disable_path: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kg: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub posts: Option<PathBuf>,
    pub d: usize,
    pub d_e: usize,
    pub atoms: usize,
    pub top_k: usize,
    pub alpha: f64,
    pub hop_cap: usize,
    pub heads: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// `D_max` = factor × largest sampled connected distance.
    pub d_max_factor: f64,
    pub d_max_samples: usize,
    /// Feature width used for posts that carry only a `feature_seed`.
    pub raw_dim: usize,
    #[serde(flatten)]
    pub ablations: Ablations,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kg: None,
            embeddings: None,
            posts: None,
            d: 64,
            d_e: 50,
            atoms: 100,
            top_k: 3,
            alpha: 0.9,
            hop_cap: 5,
            heads: 4,
            lr: 5e-4,
            batch_size: 16,
            epochs: 30,
            seed: 42,
            d_max_factor: 10.0,
            d_max_samples: 2000,
            raw_dim: 32,
            ablations: Ablations::default(),
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "kg",
    "embeddings",
    "posts",
    "d",
    "d_e",
    "atoms",
    "top_k",
    "alpha",
    "hop_cap",
    "heads",
    "lr",
    "batch_size",
    "epochs",
    "seed",
    "d_max_factor",
    "d_max_samples",
    "raw_dim",
    "disable_bsc",
    "disable_kec",
    "disable_align",
    "disable_se_i",
    "disable_se_c",
    "disable_e_i",
    "disable_e_c",
    "disable_path",
];

fn invalid(key: &str, value: &str, why: &str) -> PipelineError {
    PipelineError::Config(format!("{key} = {value}: {why}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value.parse().map_err(|_| invalid(key, value, "not a valid number"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

impl RunConfig {
    /// Applies one setting. `base` resolves relative paths.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), PipelineError> {
        let path = |v: &str| {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        let a = &mut self.ablations;
        match key {
            "kg" => self.kg = Some(path(value)),
            "embeddings" => self.embeddings = Some(path(value)),
            "posts" => self.posts = Some(path(value)),
            "d" => self.d = parse_num(key, value)?,
            "d_e" => self.d_e = parse_num(key, value)?,
            "atoms" => self.atoms = parse_num(key, value)?,
            "top_k" => self.top_k = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "hop_cap" => self.hop_cap = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "d_max_factor" => self.d_max_factor = parse_num(key, value)?,
            "d_max_samples" => self.d_max_samples = parse_num(key, value)?,
            "raw_dim" => self.raw_dim = parse_num(key, value)?,
            "disable_bsc" => a.disable_bsc = parse_bool(key, value)?,
            "disable_kec" => a.disable_kec = parse_bool(key, value)?,
            "disable_align" => a.disable_align = parse_bool(key, value)?,
            "disable_se_i" => a.disable_se_i = parse_bool(key, value)?,
            "disable_se_c" => a.disable_se_c = parse_bool(key, value)?,
            "disable_e_i" => a.disable_e_i = parse_bool(key, value)?,
            "disable_e_c" => a.disable_e_c = parse_bool(key, value)?,
            "disable_path" => a.disable_path = parse_bool(key, value)?,
            _ => return Err(PipelineError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim(), base)
                .map_err(|e| PipelineError::Config(format!("line {}: {}", i + 1, e.detail())))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent())
    }

    /// Renders the file format; paths are written as given.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (key, p) in [("kg", &self.kg), ("embeddings", &self.embeddings), ("posts", &self.posts)] {
            if let Some(p) = p {
                let _ = writeln!(out, "{key} = {}", p.display());
            }
        }
        let a = &self.ablations;
        let _ = writeln!(out, "d = {}", self.d);
        let _ = writeln!(out, "d_e = {}", self.d_e);
        let _ = writeln!(out, "atoms = {}", self.atoms);
        let _ = writeln!(out, "top_k = {}", self.top_k);
        let _ = writeln!(out, "alpha = {}", self.alpha);
        let _ = writeln!(out, "hop_cap = {}", self.hop_cap);
        let _ = writeln!(out, "heads = {}", self.heads);
        let _ = writeln!(out, "lr = {}", self.lr);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "epochs = {}", self.epochs);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "d_max_factor = {}", self.d_max_factor);
        let _ = writeln!(out, "d_max_samples = {}", self.d_max_samples);
        let _ = writeln!(out, "raw_dim = {}", self.raw_dim);
        for (key, on) in [
            ("disable_bsc", a.disable_bsc),
            ("disable_kec", a.disable_kec),
            ("disable_align", a.disable_align),
            ("disable_se_i", a.disable_se_i),
            ("disable_se_c", a.disable_se_c),
            ("disable_e_i", a.disable_e_i),
            ("disable_e_c", a.disable_e_c),
            ("disable_path", a.disable_path),
        ] {
            let _ = writeln!(out, "{key} = {on}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("d", self.d),
            ("d_e", self.d_e),
            ("atoms", self.atoms),
            ("top_k", self.top_k),
            ("hop_cap", self.hop_cap),
            ("heads", self.heads),
            ("batch_size", self.batch_size),
            ("raw_dim", self.raw_dim),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(PipelineError::Config(format!("{key} must be positive")));
            }
        }
        if self.d % self.heads != 0 {
            return Err(PipelineError::Config(format!(
                "d = {} is not divisible by heads = {}",
                self.d, self.heads
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PipelineError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(PipelineError::Config(format!("lr must be a finite non-negative number, got {}", self.lr)));
        }
        if !(self.d_max_factor > 0.0 && self.d_max_factor.is_finite()) {
            return Err(PipelineError::Config("d_max_factor must be positive".into()));
        }
        Ok(())
    }
}
