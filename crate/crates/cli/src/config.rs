//! Configuration loading and merging. Precedence is flags > environment >
//! config file > defaults. The credential never enters the config at all:
//! the file names an environment variable, and the remote backend reads it
//! at call time. Snapshots embedded in output artifacts likewise omit the
//! base URL, since it may have come from the environment.

use std::env;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use roundtable::backend::remote::DEFAULT_API_KEY_ENV;
use roundtable::domain::RunConfig;

/// Environment variable overriding the remote endpoint.
pub const BASE_URL_ENV: &str = "ROUNDTABLE_BASE_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Replay canned responses from a fixture script.
    Scripted,
    /// OpenAI-compatible HTTP endpoint.
    Remote,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Scripted => "scripted",
            BackendKind::Remote => "remote",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Endpoint root for the remote kind, e.g. `https://host/v1`. The
    /// `ROUNDTABLE_BASE_URL` environment variable overrides it.
    pub base_url: Option<String>,
    pub model_id: Option<String>,
    /// Fixture file for the scripted kind.
    pub script_path: Option<PathBuf>,
    /// Name of the environment variable holding the API credential; only
    /// the name is ever stored or written.
    pub api_key_env: String,
    pub temperature: Option<f64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            base_url: None,
            model_id: None,
            script_path: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            temperature: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    /// No execution: drafted solutions pass through unchanged.
    Passthrough,
    /// Pipe code blocks through an external command.
    Command,
}

impl ExecutorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecutorKind::Passthrough => "passthrough",
            ExecutorKind::Command => "command",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    pub kind: ExecutorKind,
    pub command: Vec<String>,
    pub timeout_seconds: u64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self { kind: ExecutorKind::Passthrough, command: Vec::new(), timeout_seconds: 10 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub run: RunConfig,
    pub backend: BackendConfig,
    pub executor: ExecutorConfig,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{0}")]
    Constraint(String),
}

/// Command-line overrides that apply on top of environment and file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub backend: Option<BackendKind>,
    pub script: Option<PathBuf>,
    pub ceo: bool,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl AppConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Unreadable { path: path.to_path_buf(), source })?;
        toml::from_str(&text)
            .map_err(|e| ConfigError::Invalid { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Builds the effective configuration: defaults, then the optional file,
    /// then the environment, then the flags.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let config = Self::resolve_unchecked(file, overrides)?;
        config.check()?;
        Ok(config)
    }

    /// Same merge without the constraint check, for commands that never
    /// construct a backend (trace validation, SFT export).
    pub fn resolve_unchecked(
        file: Option<&Path>,
        overrides: &Overrides,
    ) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        if let Ok(url) = env::var(BASE_URL_ENV) {
            if !url.trim().is_empty() {
                config.backend.base_url = Some(url);
            }
        }
        if let Some(kind) = overrides.backend {
            config.backend.kind = kind;
        }
        if let Some(script) = &overrides.script {
            config.backend.script_path = Some(script.clone());
        }
        if overrides.ceo {
            config.run.ceo_enabled = true;
        }
        if let Some(seed) = overrides.seed {
            config.seed = Some(seed);
        }
        if let Some(dir) = &overrides.output_dir {
            config.output_dir = Some(dir.clone());
        }
        Ok(config)
    }

    /// Structural invariants beyond what `RunConfig::validate` covers.
    pub fn check(&self) -> Result<(), ConfigError> {
        self.run.validate().map_err(|e| ConfigError::Constraint(e.to_string()))?;
        match self.backend.kind {
            BackendKind::Scripted => {
                if self.backend.script_path.is_none() {
                    return Err(ConfigError::Constraint(
                        "scripted backend requires a script path (set backend.script_path or pass --script)".into(),
                    ));
                }
            }
            BackendKind::Remote => {
                if self.backend.base_url.is_none() {
                    return Err(ConfigError::Constraint(format!(
                        "remote backend requires a base URL (set backend.base_url or {BASE_URL_ENV})"
                    )));
                }
                if self.backend.model_id.is_none() {
                    return Err(ConfigError::Constraint(
                        "remote backend requires backend.model_id".into(),
                    ));
                }
            }
        }
        if self.executor.kind == ExecutorKind::Command && self.executor.command.is_empty() {
            return Err(ConfigError::Constraint(
                "command executor requires a non-empty executor.command".into(),
            ));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// The run-semantics snapshot embedded in every artifact. Credentials
    /// never appear (only the variable name does), and the base URL is
    /// omitted because the environment may have supplied it. Worker count
    /// and output directory are excluded: they affect where and how fast
    /// artifacts are produced, never their contents.
    pub fn snapshot(&self) -> serde_json::Value {
        json!({
            "run": self.run,
            "seed": self.seed,
            "backend": {
                "kind": self.backend.kind.as_str(),
                "model_id": self.backend.model_id,
                "script_path": self.backend.script_path,
                "api_key_env": self.backend.api_key_env,
                "temperature": self.backend.temperature,
            },
            "executor": {
                "kind": self.executor.kind.as_str(),
                "command": self.executor.command,
                "timeout_seconds": self.executor.timeout_seconds,
            },
        })
    }
}
