//! Pipeline settings: `key=value` files with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::feature_store::ClassBounds;
use crate::graph_builder::{EdgeWeighting, GraphOptions, SigmaMode, Topology, DEFAULT_KNN};
use crate::infomap::{DetectOptions, DEFAULT_MAX_SWEEPS, DEFAULT_TRIALS};
use crate::selector::Allocation;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{key}: {msg}")]
    Value { key: String, msg: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub const KEYS: &[&str] = &[
    "manifest",
    "csv",
    "dim",
    "vpc",
    "seed",
    "knn",
    "sigma",
    "raw-distance-weights",
    "alloc",
    "tolerance",
    "bounds",
    "jobs",
    "trials",
    "max-sweeps",
    "out",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    /// Binary manifest (header plus feature-file references).
    pub manifest: Option<PathBuf>,
    /// All-in-one CSV manifest.
    pub csv: Option<PathBuf>,
    /// Feature dimension expected from a CSV manifest; inferred when unset.
    pub dim: Option<usize>,
    pub vpc: usize,
    pub seed: u64,
    pub knn: Topology,
    pub sigma: SigmaMode,
    pub raw_distance_weights: bool,
    pub alloc: Allocation,
    pub tolerance: f64,
    #[serde(serialize_with = "as_string")]
    pub bounds: ClassBounds,
    pub jobs: usize,
    pub trials: usize,
    pub max_sweeps: usize,
    pub out: PathBuf,
}

fn as_string<S: serde::Serializer>(b: &ClassBounds, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&b.to_string())
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            csv: None,
            dim: None,
            vpc: 5,
            seed: 0,
            knn: Topology::Knn(DEFAULT_KNN),
            sigma: SigmaMode::Median,
            raw_distance_weights: false,
            alloc: Allocation::Equal,
            tolerance: 2.0,
            bounds: ClassBounds::default(),
            jobs: 1,
            trials: DEFAULT_TRIALS,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            out: PathBuf::from("out"),
        }
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(format!("expected a boolean, got {other:?}")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| format!("{e} ({v:?})"))
}

impl PipelineConfig {
    /// Applies one setting. Relative paths are taken relative to `base` when given.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        let path = |v: &str| -> PathBuf {
            let p = PathBuf::from(v.trim());
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        let key = key.trim().replace('_', "-");
        let res: Result<(), String> = match key.as_str() {
            // the two inputs are exclusive; the later setting replaces the earlier
            "manifest" => {
                self.manifest = Some(path(value));
                self.csv = None;
                Ok(())
            }
            "csv" => {
                self.csv = Some(path(value));
                self.manifest = None;
                Ok(())
            }
            "out" => {
                self.out = path(value);
                Ok(())
            }
            "dim" => parse_num(value).map(|v| self.dim = Some(v)),
            "vpc" => parse_num(value).map(|v| self.vpc = v),
            "seed" => parse_num(value).map(|v| self.seed = v),
            "knn" => value.parse().map(|v| self.knn = v),
            "sigma" => value.parse().map(|v| self.sigma = v),
            "raw-distance-weights" => parse_bool(value).map(|v| self.raw_distance_weights = v),
            "alloc" => value.parse().map(|v| self.alloc = v),
            "tolerance" => parse_num(value).map(|v| self.tolerance = v),
            "bounds" => value.parse::<ClassBounds>().map(|v| self.bounds = v).map_err(|e| e.to_string()),
            "jobs" => parse_num(value).map(|v| self.jobs = v),
            "trials" => parse_num(value).map(|v| self.trials = v),
            "max-sweeps" => parse_num(value).map(|v| self.max_sweeps = v),
            _ => return Err(ConfigError::UnknownKey(key)),
        };
        res.map_err(|msg| ConfigError::Value { key, msg })
    }

    /// Reads `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty());
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| ConfigError::Parse { path: path.to_path_buf(), line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| parse_err("expected key=value".into()))?;
            self.set(k, v, base).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_file(path)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.vpc < 1 {
            return bad("vpc must be at least 1".into());
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return bad(format!("tolerance must be >= 0, got {}", self.tolerance));
        }
        if self.jobs < 1 {
            return bad("jobs must be at least 1".into());
        }
        if self.dim == Some(0) {
            return bad("dim must be at least 1".into());
        }
        match (&self.manifest, &self.csv) {
            (None, None) => return bad("one of manifest or csv is required".into()),
            (Some(_), Some(_)) => return bad("manifest and csv are mutually exclusive".into()),
            (Some(p), None) | (None, Some(p)) => {
                if !p.is_file() {
                    return bad(format!("input {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    pub fn graph_options(&self) -> GraphOptions {
        let weighting =
            if self.raw_distance_weights { EdgeWeighting::RawDistance } else { EdgeWeighting::Gaussian(self.sigma) };
        GraphOptions { topology: self.knn, weighting }
    }

    pub fn detect_options(&self) -> DetectOptions {
        DetectOptions { seed: self.seed, max_sweeps: self.max_sweeps, trials: self.trials }
    }
}
