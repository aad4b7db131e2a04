//! Run configuration: a TOML file that round-trips through [`PipelineConfig`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunker::{Boundary, Budget, TokenEstimatorConfig};
use crate::extraction::ExtractMode;
use crate::prompting::FieldPolicy;
use crate::provider::{LiveConfig, RateBudget, RetryPolicy, MAX_TEMPERATURE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterMode {
    Live,
    #[default]
    Replay,
    Record,
}

impl std::str::FromStr for AdapterMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(AdapterMode::Live),
            "replay" => Ok(AdapterMode::Replay),
            "record" => Ok(AdapterMode::Record),
            other => Err(format!("unknown adapter mode {other:?} (live, replay, record)")),
        }
    }
}

impl std::fmt::Display for AdapterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdapterMode::Live => "live",
            AdapterMode::Replay => "replay",
            AdapterMode::Record => "record",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatePaths {
    /// Replaces the task's shipped prompt.
    pub prompt: Option<PathBuf>,
    /// Replaces the task's shipped second-pass prompt, if it has one.
    pub follow_up: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model_id: String,
    pub temperature: f64,
    pub allow_nonzero_temperature: bool,
    pub mode: AdapterMode,
    pub workers: usize,
    pub cassette_dir: PathBuf,
    pub runs_dir: PathBuf,
    /// Overrides the task's own chunk boundary.
    pub boundary: Option<Boundary>,
    pub extract_mode: ExtractMode,
    /// Replacement 4-digit code table for the classification task.
    pub naics_table: Option<PathBuf>,
    pub budget: Budget,
    pub estimator: TokenEstimatorConfig,
    pub retry: RetryPolicy,
    pub rate: RateBudget,
    pub templates: TemplatePaths,
    pub field_policy: FieldPolicy,
    pub live: LiveConfig,
    /// Directory relative paths are resolved against. Set by [`PipelineConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model_id: "claude-3-opus-20240229".into(),
            temperature: 0.0,
            allow_nonzero_temperature: false,
            mode: AdapterMode::Replay,
            workers: 4,
            cassette_dir: "cassettes".into(),
            runs_dir: "runs".into(),
            boundary: None,
            extract_mode: ExtractMode::default(),
            naics_table: None,
            budget: Budget::default(),
            estimator: TokenEstimatorConfig::default(),
            retry: RetryPolicy::default(),
            rate: RateBudget::default(),
            templates: TemplatePaths::default(),
            field_policy: FieldPolicy::default(),
            live: LiveConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn cassette_path(&self) -> PathBuf {
        self.resolve(&self.cassette_dir)
    }

    pub fn runs_path(&self) -> PathBuf {
        self.resolve(&self.runs_dir)
    }

    /// SHA-256 of the canonical TOML rendering, lowercase hex.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    /// Every problem found, in a fixed order. Empty means valid.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.model_id.trim().is_empty() {
            out.push("model_id must not be empty".to_string());
        }
        if !(0.0..=MAX_TEMPERATURE).contains(&self.temperature) {
            out.push(format!("temperature {} outside [0, {MAX_TEMPERATURE}]", self.temperature));
        } else if self.temperature > 0.0 && !self.allow_nonzero_temperature {
            out.push(format!(
                "temperature {} breaks the pinned-temperature policy: temperature must be 0 unless allow_nonzero_temperature = true",
                self.temperature
            ));
        }
        if self.workers == 0 {
            out.push("workers must be at least 1".to_string());
        }
        if let Err(e) = self.budget.validate() {
            out.push(format!("budget: {e}"));
        }
        if let Err(e) = self.estimator.validate() {
            out.push(format!("estimator: {e}"));
        }
        if let Err(e) = self.retry.validate() {
            out.push(e);
        }
        if let Err(e) = self.rate.validate() {
            out.push(e);
        }
        if self.budget.max_input_tokens > self.rate.tokens_per_minute {
            out.push(format!(
                "budget.max_input_tokens {} exceeds rate.tokens_per_minute {}; a full chunk could never be admitted",
                self.budget.max_input_tokens, self.rate.tokens_per_minute
            ));
        }
        if matches!(self.mode, AdapterMode::Live | AdapterMode::Record) {
            if let Err(e) = self.live.validate() {
                out.push(e);
            }
        }
        let templates = [("templates.prompt", &self.templates.prompt), ("templates.follow_up", &self.templates.follow_up)];
        for (key, path) in templates {
            if let Some(p) = path {
                let p = self.resolve(p);
                if !p.is_file() {
                    out.push(format!("{key}: template file {} does not exist", p.display()));
                }
            }
        }
        if let Some(p) = &self.naics_table {
            let p = self.resolve(p);
            if !p.is_file() {
                out.push(format!("naics_table: {} does not exist", p.display()));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(d))
        }
    }
}
