//! Pipeline configuration: a TOML file with `${VAR}` interpolation, plus
//! command-line overrides applied on top.
//!
//! ```toml
//! seed = 7
//! template_dir = "templates"
//!
//! [generator]
//! base_url = "https://api.openai.com/v1"
//! model = "gpt-4o-mini"
//! api_key = "${OPENAI_API_KEY}"
//!
//! [detector]
//! tau_c = 0.7
//! head1 = "models/head1.json"
//! head2 = "models/head2.json"
//! ```
//!
//! Relative paths resolve against the directory holding the file.

use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{CostTable, DetectorMode, ThresholdConfig};
use crate::evaluate::CarsWeights;
use crate::generate::GenerationConfig;
use crate::resolve::ResolveConfig;
use crate::retrieval::RetrievalConfig;

static ENV_VAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Environment variable holding the key; read when `api_key` is unset.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
}

impl EndpointConfig {
    fn with_model(model: &str) -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            model: model.to_string(),
            api_key: None,
            api_key_env: Some("OPENAI_API_KEY".to_string()),
            timeout_secs: 60,
            max_attempts: 3,
        }
    }
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self::with_model("gpt-4o-mini")
    }
}

/// Shared by every live provider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsConfig {
    pub max_concurrent: usize,
    pub requests_per_minute: Option<usize>,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self {
            max_concurrent: 8,
            requests_per_minute: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub mode: DetectorMode,
    pub tau_c: f64,
    pub head1: Option<PathBuf>,
    pub head2: Option<PathBuf>,
    /// Run the closed-book/open-book comparison.
    pub parametric: bool,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            mode: DetectorMode::default(),
            tau_c: ThresholdConfig::default().tau_c(),
            head1: None,
            head2: None,
            parametric: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub workers: usize,
    pub bootstrap_resamples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            workers: 4,
            bootstrap_resamples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Falls back to the built-in templates when unset.
    pub template_dir: Option<PathBuf>,
    pub generator: EndpointConfig,
    pub judge: EndpointConfig,
    pub embedder: EndpointConfig,
    pub limits: LimitsConfig,
    pub detector: DetectorSection,
    pub retrieval: RetrievalConfig,
    pub resolve: ResolveConfig,
    pub generation: GenerationConfig,
    /// `[w_a, w_d, w_r, w_s]`.
    pub cars: CarsWeights,
    pub cost: CostTable,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            template_dir: None,
            generator: EndpointConfig::with_model("gpt-4o-mini"),
            judge: EndpointConfig::with_model("gpt-4o"),
            embedder: EndpointConfig::with_model("text-embedding-3-small"),
            limits: LimitsConfig::default(),
            detector: DetectorSection::default(),
            retrieval: RetrievalConfig::default(),
            resolve: ResolveConfig::default(),
            generation: GenerationConfig::default(),
            cars: CarsWeights::default(),
            cost: CostTable::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Values given on the command line; `None` keeps the file value.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tau_c: Option<f64>,
    pub k: Option<usize>,
}

/// Replaces `${VAR}` with the variable's value. Comment lines are left alone.
pub fn interpolate_env(text: &str) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        if line.trim_start().starts_with('#') {
            out.push_str(line);
        } else {
            let mut missing = None;
            let replaced = ENV_VAR.replace_all(line, |c: &regex::Captures| {
                std::env::var(&c[1]).unwrap_or_else(|_| {
                    missing.get_or_insert_with(|| c[1].to_string());
                    String::new()
                })
            });
            if let Some(var) = missing {
                return Err(ConfigError::MissingEnv(var));
            }
            out.push_str(&replaced);
        }
        out.push('\n');
    }
    Ok(out)
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let text = interpolate_env(text)?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads, interpolates, and rebases relative paths onto the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.template_dir);
        rebase(&mut config.detector.head1);
        rebase(&mut config.detector.head2);
        Ok(config)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(tau_c) = overrides.tau_c {
            self.detector.tau_c = tau_c;
        }
        if let Some(k) = overrides.k {
            self.retrieval.k = k;
        }
        self.resolve.seed = self.seed;
    }

    /// Checks ranges and that every referenced path exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        ThresholdConfig::new(self.detector.tau_c).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.retrieval.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.detector.head1.is_some() != self.detector.head2.is_some() {
            return Err(ConfigError::Invalid("detector.head1 and detector.head2 must be given together".into()));
        }
        let paths = [&self.template_dir, &self.detector.head1, &self.detector.head2];
        for p in paths.into_iter().flatten() {
            if !p.exists() {
                return Err(ConfigError::MissingPath(p.clone()));
            }
        }
        if self.limits.max_concurrent == 0 || self.eval.workers == 0 {
            return Err(ConfigError::Invalid("limits.max_concurrent and eval.workers must be positive".into()));
        }
        Ok(())
    }

    pub fn threshold(&self) -> ThresholdConfig {
        ThresholdConfig::new(self.detector.tau_c).unwrap_or_default()
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("invalid configuration file: {0}")]
    Parse(String),
    #[error("environment variable {0} referenced in the configuration is not set")]
    MissingEnv(String),
    #[error("configured path {} does not exist", .0.display())]
    MissingPath(PathBuf),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}
