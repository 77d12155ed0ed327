//! Run configuration.
//!
//! A TOML file, usually written with dotted keys (`knn.k = 50`). Absent keys
//! take their defaults and unknown keys are rejected. The resolved
//! configuration has a stable hash that every artifact carries.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::estimator::{AscentConfig, ToleranceMode};
use crate::knnpolicy::RollingConfig;
use crate::oracle::DEFAULT_ENUMERATION_CAP;
use crate::trajdata::PanelSchema;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "REIRL_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("`{key}` = {value} out of range: {allowed}")]
    Range { key: &'static str, value: String, allowed: &'static str },
    #[error("cannot read config `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub entity_column: String,
    pub period_column: String,
    pub action_column: String,
    pub delimiter: char,
    /// Z-score features at ingest.
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let schema = PanelSchema::default();
        Self {
            input: None,
            out_dir: PathBuf::from("out"),
            entity_column: schema.entity_column,
            period_column: schema.period_column,
            action_column: schema.action_column,
            delimiter: schema.delimiter as char,
            standardize: true,
        }
    }
}

impl DataConfig {
    pub fn schema(&self) -> PanelSchema {
        PanelSchema {
            entity_column: self.entity_column.clone(),
            period_column: self.period_column.clone(),
            action_column: self.action_column.clone(),
            delimiter: self.delimiter as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    /// Minimum jointly observed features; absent means `ceil(K / 2)`.
    pub m: Option<usize>,
    pub lambda: f64,
    pub eps: f64,
    pub start_period: Option<i64>,
    pub debug_neighbors: bool,
}

impl Default for KnnConfig {
    fn default() -> Self {
        let r = RollingConfig::default();
        Self {
            k: r.k,
            m: r.m,
            lambda: r.lambda,
            eps: r.eps,
            start_period: r.start_period,
            debug_neighbors: r.debug_neighbors,
        }
    }
}

impl KnnConfig {
    pub fn rolling(&self) -> RollingConfig {
        RollingConfig {
            k: self.k,
            m: self.m,
            lambda: self.lambda,
            eps: self.eps,
            start_period: self.start_period,
            debug_neighbors: self.debug_neighbors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReirlConfig {
    pub alpha: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub delta: f64,
    pub gamma: f64,
    pub seed: u64,
    pub uniform_actions: usize,
    pub tolerance_mode: ToleranceMode,
    pub theta_cap: f64,
}

impl Default for ReirlConfig {
    fn default() -> Self {
        let a = AscentConfig::default();
        Self {
            alpha: a.alpha,
            max_iters: a.max_iters,
            grad_tol: a.grad_tol,
            delta: 0.05,
            gamma: 1.0,
            seed: a.seed,
            uniform_actions: a.uniform_action_count,
            tolerance_mode: a.tolerance_mode,
            theta_cap: a.theta_cap,
        }
    }
}

impl ReirlConfig {
    pub fn ascent(&self) -> AscentConfig {
        AscentConfig {
            alpha: self.alpha,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            seed: self.seed,
            uniform_action_count: self.uniform_actions,
            tolerance_mode: self.tolerance_mode,
            theta_cap: self.theta_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub cap: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { cap: DEFAULT_ENUMERATION_CAP }
    }
}

/// Horizons kept by `discretize` and `ttest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonConfig {
    pub min: usize,
    pub max: usize,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self { min: 8, max: 47 }
    }
}

impl HorizonConfig {
    pub fn contains(&self, h: usize) -> bool {
        (self.min..=self.max).contains(&h)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub knn: KnnConfig,
    pub reirl: ReirlConfig,
    pub oracle: OracleConfig,
    pub horizon: HorizonConfig,
}

fn range(key: &'static str, ok: bool, value: impl ToString, allowed: &'static str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Range { key, value: value.to_string(), allowed })
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.data;
        range("data.delimiter", d.delimiter.is_ascii(), d.delimiter, "a single ASCII character")?;
        let k = &self.knn;
        range("knn.k", k.k >= 1, k.k, ">= 1")?;
        if let Some(m) = k.m {
            range("knn.m", m >= 1, m, ">= 1")?;
        }
        range("knn.lambda", k.lambda > 0.0 && k.lambda.is_finite(), k.lambda, "> 0")?;
        range("knn.eps", k.eps > 0.0 && k.eps < 1.0, k.eps, "(0, 1)")?;
        let r = &self.reirl;
        range("reirl.alpha", r.alpha > 0.0 && r.alpha.is_finite(), r.alpha, "> 0")?;
        range("reirl.max_iters", r.max_iters >= 1, r.max_iters, ">= 1")?;
        range("reirl.grad_tol", r.grad_tol >= 0.0 && r.grad_tol.is_finite(), r.grad_tol, ">= 0")?;
        range("reirl.delta", r.delta > 0.0 && r.delta < 1.0, r.delta, "(0, 1)")?;
        range("reirl.gamma", (0.0..=1.0).contains(&r.gamma), r.gamma, "[0, 1]")?;
        range("reirl.uniform_actions", (1..=7).contains(&r.uniform_actions), r.uniform_actions, "1..=7")?;
        range("reirl.theta_cap", r.theta_cap > 0.0, r.theta_cap, "> 0")?;
        range("oracle.cap", self.oracle.cap >= 1, self.oracle.cap, ">= 1")?;
        let h = &self.horizon;
        range("horizon.min", h.min >= 1, h.min, ">= 1")?;
        range("horizon.max", h.max >= h.min, h.max, ">= horizon.min")?;
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the resolved configuration as
    /// JSON. File locations (`data.input`, `data.out_dir`) are left out so
    /// the same settings hash alike wherever they run.
    pub fn hash(&self) -> String {
        let mut view = self.clone();
        view.data.input = None;
        view.data.out_dir = PathBuf::new();
        let json = serde_json::to_string(&view).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Parses and validates config text.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads `path`, else the file named by `REIRL_CONFIG`, else defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
    let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    match path.map(Path::to_path_buf).or(from_env) {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
            parse_config(&text)
        }
        None => Ok(RunConfig::default()),
    }
}
