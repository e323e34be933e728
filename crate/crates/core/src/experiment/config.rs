use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{Algorithm, Hyperparams, Variant};
use crate::assets::INTERVALS_PER_DAY;
use crate::env::{ActionSpace, DataSource, ScenarioConfig};

/// Why a configuration could not be loaded.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("config file {0} does not exist")]
    Missing(PathBuf),

    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("unknown algorithm `{0}`; expected baseline, dqn, drqn, bi_drqn, ppo, n_dqn, n_drqn, n_bi_drqn or n_ppo")]
    UnknownAlgorithm(String),

    #[error("invalid config: {0}")]
    Invalid(String),

    #[error("{field} refers to {path}, which does not exist")]
    MissingData { field: &'static str, path: PathBuf },
}

/// What drives the learner world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Baseline,
    Rl(Variant),
}

impl Method {
    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Baseline => None,
            Method::Rl(v) => Some(v),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Baseline => f.write_str("baseline"),
            Method::Rl(v) => v.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// `baseline` or one of the eight variants, e.g. `n_ppo`.
    pub name: String,
    /// Overrides the space implied by the name; `ut_res` turns `ppo` into `n_ppo`.
    pub action_space: Option<ActionSpace>,
    pub gcn: bool,
    pub hyperparams: Hyperparams,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        AlgorithmConfig {
            name: "baseline".into(),
            action_space: None,
            gcn: false,
            hyperparams: Hyperparams::default(),
        }
    }
}

impl AlgorithmConfig {
    pub fn method(&self) -> Result<Method, LoadError> {
        let name = self.name.trim().to_ascii_lowercase();
        if name == "baseline" {
            if self.gcn || self.action_space.is_some() {
                return Err(LoadError::Invalid("the baseline takes no action_space or gcn setting".into()));
            }
            return Ok(Method::Baseline);
        }
        let (space, base) = match name.strip_prefix("n_") {
            Some(rest) => (ActionSpace::UtRes, rest),
            None => (ActionSpace::Res, name.as_str()),
        };
        let algorithm = Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == base)
            .ok_or_else(|| LoadError::UnknownAlgorithm(self.name.clone()))?;
        let space = match self.action_space {
            Some(s) if space == ActionSpace::UtRes && s != space => {
                return Err(LoadError::Invalid(format!(
                    "algorithm `{}` implies the ut_res action space, but action_space is res",
                    self.name
                )))
            }
            Some(s) => s,
            None => space,
        };
        Ok(Method::Rl(Variant::new(algorithm, self.gcn, space)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One independent run per seed.
    pub seeds: Vec<u64>,
    /// Training episodes, one scenario day each.
    pub epochs: usize,
    /// Days `0..train_days` form the training pool.
    pub train_days: usize,
    /// Days following the pool used for evaluation.
    pub eval_days: usize,
    /// Intervals per episode.
    pub horizon: usize,
    pub output: PathBuf,
    pub scenario: ScenarioConfig,
    pub algorithm: AlgorithmConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![0],
            epochs: 200,
            train_days: 30,
            eval_days: 7,
            horizon: INTERVALS_PER_DAY,
            output: PathBuf::from("runs/default"),
            scenario: ScenarioConfig::default(),
            algorithm: AlgorithmConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn method(&self) -> Result<Method, LoadError> {
        self.algorithm.method()
    }

    pub fn total_days(&self) -> usize {
        self.train_days + self.eval_days
    }

    pub fn eval_range(&self) -> std::ops::Range<usize> {
        self.train_days..self.total_days()
    }

    /// Checks every invariant, including that referenced data files exist.
    pub fn validate(&self) -> Result<(), LoadError> {
        let method = self.method()?;
        let invalid = |m: String| Err(LoadError::Invalid(m));
        if self.seeds.is_empty() {
            return invalid("seeds must list at least one seed".into());
        }
        if self.train_days == 0 || self.eval_days == 0 {
            return invalid("train_days and eval_days must both be at least 1".into());
        }
        if self.horizon == 0 || self.horizon > INTERVALS_PER_DAY {
            return invalid(format!("horizon must be in 1..={INTERVALS_PER_DAY}, got {}", self.horizon));
        }
        if method != Method::Baseline && self.epochs == 0 {
            return invalid("epochs must be at least 1".into());
        }
        self.scenario.validate().or_else(|e| invalid(e.to_string()))?;
        self.algorithm.hyperparams.validate().or_else(|e| invalid(e.to_string()))?;
        for (field, path) in self.data_files() {
            if !path.is_file() {
                return Err(LoadError::MissingData {
                    field,
                    path: path.to_path_buf(),
                });
            }
        }
        Ok(())
    }

    fn data_files(&self) -> Vec<(&'static str, &Path)> {
        let mut out = Vec::new();
        if let DataSource::Csv(p) = &self.scenario.generation {
            out.push(("scenario.generation", p.as_path()));
        }
        if let DataSource::Csv(p) = &self.scenario.tariff.smp {
            out.push(("scenario.tariff.smp", p.as_path()));
        }
        if let Some(p) = &self.scenario.appliances {
            out.push(("scenario.appliances", p.as_path()));
        }
        out
    }

    /// Makes relative data paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Csv(p) = &mut self.scenario.generation {
            fix(p);
        }
        if let DataSource::Csv(p) = &mut self.scenario.tariff.smp {
            fix(p);
        }
        if let Some(p) = &mut self.scenario.appliances {
            fix(p);
        }
    }

    /// SHA-256 over every field.
    pub fn hash(&self) -> String {
        digest(self)
    }

    /// SHA-256 over the fields that determine the simulated world.
    pub fn scenario_hash(&self) -> String {
        digest(&(&self.scenario, &self.seeds, self.horizon, self.train_days, self.eval_days))
    }

    pub fn to_toml(&self) -> crate::Result<String> {
        toml::to_string_pretty(self).map_err(|e| crate::Error::Config(format!("cannot serialise config: {e}")))
    }
}

fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialise to JSON");
    hex::encode(Sha256::digest(bytes))
}

/// Parses a TOML config without touching the filesystem.
pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig, LoadError> {
    toml::from_str(text).map_err(|e| LoadError::Parse {
        path: origin.to_path_buf(),
        message: e.message().to_string(),
    })
}

/// Reads, parses and validates a TOML config. Relative data paths are taken
/// from the config file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => LoadError::Missing(path.to_path_buf()),
        _ => LoadError::Read {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let mut cfg = parse_config(&text, path)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}
