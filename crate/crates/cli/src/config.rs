use std::path::{Path, PathBuf};

use scene_ground::llm::{LlmConfig, ENV_API_URL};
use scene_ground::prompt::DEFAULT_TOKEN_BUDGET;
use scene_ground::OracleConfig;
use serde::{Deserialize, Serialize};

/// Config file looked up in the working directory when `--config` is absent.
pub const DEFAULT_CONFIG_FILE: &str = "scene-ground.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Json,
}

/// On-disk config. Secrets are not accepted here; the API key comes from the
/// environment only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub oracle: OracleConfig,
    pub llm: LlmConfig,
    pub budget: usize,
    pub strict: bool,
    pub format: Format,
    /// Extra in-context examples, JSON array.
    pub examples: Option<PathBuf>,
    /// Replacement system prompt template.
    pub template: Option<PathBuf>,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            oracle: OracleConfig::default(),
            llm: LlmConfig::default(),
            budget: DEFAULT_TOKEN_BUDGET,
            strict: false,
            format: Format::Text,
            examples: None,
            template: None,
        }
    }
}

/// Values given on the command line; `None` means not given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub format: Option<Format>,
    pub budget: Option<usize>,
    pub strict: bool,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub near_threshold: Option<f64>,
    pub concurrency: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub oracle: OracleConfig,
    pub llm: LlmConfig,
    pub budget: usize,
    pub strict: bool,
    pub format: Format,
    pub examples: Option<PathBuf>,
    pub template: Option<PathBuf>,
}

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(m) | ConfigError::Invalid(m) => f.write_str(m),
        }
    }
}

fn read_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| ConfigError::Invalid(format!("bad config {}: {e}", path.display())))
}

impl CliConfig {
    /// Merges default < file < environment < flags and validates the result.
    /// `env_url` is the value of the base-URL variable, passed in so tests do
    /// not depend on the process environment.
    pub fn resolve(flags: &Overrides, env_url: Option<String>) -> Result<Self, ConfigError> {
        let file = match &flags.config {
            Some(p) => read_file(p)?,
            None => {
                let p = Path::new(DEFAULT_CONFIG_FILE);
                if p.is_file() {
                    read_file(p)?
                } else {
                    FileConfig::default()
                }
            }
        };
        let mut cfg = CliConfig {
            oracle: file.oracle,
            llm: file.llm,
            budget: file.budget,
            strict: file.strict,
            format: file.format,
            examples: file.examples,
            template: file.template,
        };
        if let Some(url) = env_url.filter(|u| !u.trim().is_empty()) {
            cfg.llm.base_url = url;
        }
        if let Some(f) = flags.format {
            cfg.format = f;
        }
        if let Some(b) = flags.budget {
            cfg.budget = b;
        }
        cfg.strict |= flags.strict;
        if let Some(m) = &flags.model {
            cfg.llm.model_name = m.clone();
        }
        if let Some(u) = &flags.base_url {
            cfg.llm.base_url = u.clone();
        }
        if let Some(t) = flags.near_threshold {
            cfg.oracle.near_threshold = t;
        }
        if let Some(c) = flags.concurrency {
            cfg.llm.concurrency = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_env(flags: &Overrides) -> Result<Self, ConfigError> {
        Self::resolve(flags, std::env::var(ENV_API_URL).ok())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.oracle
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.llm.validate().map_err(ConfigError::Invalid)?;
        if self.budget == 0 {
            return Err(ConfigError::Invalid("budget must be positive".into()));
        }
        Ok(())
    }
}
