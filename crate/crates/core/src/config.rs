//! Service and batch configuration: a TOML file with `VENUERANK_*` environment
//! overrides on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::AnalyticsConfig;
use crate::rank::RankConfig;
use crate::scheduler::SchedulerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid value {value:?} for {key}")]
    Env { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Directory with the dataset files; the service starts empty without it.
    pub data_dir: Option<PathBuf>,
    pub log_path: PathBuf,
    pub listen: String,
    pub seed: u64,
    pub alpha_individual: f64,
    pub alpha_consensus: f64,
    pub questions_target: u32,
    pub comparisons_per_venue: u32,
    /// Fields accepted for new sessions in addition to those in the dataset.
    pub fields: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: None,
            log_path: PathBuf::from("events.jsonl"),
            listen: "127.0.0.1:8080".into(),
            seed: 0,
            alpha_individual: 0.0,
            alpha_consensus: 20.0,
            questions_target: crate::discovery::DEFAULT_QUESTIONS_TARGET,
            comparisons_per_venue: 3,
            fields: Vec::new(),
        }
    }
}

pub const ENV_PREFIX: &str = "VENUERANK_";

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    /// Reads `path` (defaults when `None`), then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
                Self::from_toml(&text, p)?
            }
            None => Config::default(),
        };
        cfg.apply_env(std::env::vars())?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Applies `VENUERANK_<KEY>` pairs; unrelated variables are ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (k, value) in vars {
            let Some(key) = k.strip_prefix(ENV_PREFIX) else { continue };
            let bad = || ConfigError::Env { key: k.clone(), value: value.clone() };
            match key.to_ascii_lowercase().as_str() {
                "data_dir" => self.data_dir = Some(PathBuf::from(&value)),
                "log_path" => self.log_path = PathBuf::from(&value),
                "listen" => self.listen = value.clone(),
                "seed" => self.seed = value.parse().map_err(|_| bad())?,
                "alpha_individual" => self.alpha_individual = value.parse().map_err(|_| bad())?,
                "alpha_consensus" => self.alpha_consensus = value.parse().map_err(|_| bad())?,
                "questions_target" => self.questions_target = value.parse().map_err(|_| bad())?,
                "comparisons_per_venue" => self.comparisons_per_venue = value.parse().map_err(|_| bad())?,
                "fields" => {
                    self.fields = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if !(self.alpha_individual >= 0.0 && self.alpha_consensus >= 0.0 && self.alpha_individual.is_finite() && self.alpha_consensus.is_finite()) {
            return Err(ConfigError::Invalid("alpha values must be >= 0".into()));
        }
        if self.questions_target == 0 {
            return Err(ConfigError::Invalid("questions_target must be positive".into()));
        }
        if self.comparisons_per_venue == 0 {
            return Err(ConfigError::Invalid("comparisons_per_venue must be positive".into()));
        }
        Ok(())
    }

    pub fn analytics(&self) -> AnalyticsConfig {
        AnalyticsConfig {
            individual: RankConfig::with_alpha(self.alpha_individual),
            consensus: RankConfig::with_alpha(self.alpha_consensus),
        }
    }

    pub fn scheduler(&self) -> SchedulerConfig {
        SchedulerConfig { min_comparisons: self.comparisons_per_venue, ..SchedulerConfig::default() }
    }
}
