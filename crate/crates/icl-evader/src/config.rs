//! TOML configuration files: a 1:1 human-editable mapping of
//! [`ExperimentConfig`].
//!
//! Secrets never live here. The config names the *environment variable*
//! holding the API key (`backend.api_key_env`); the key itself is read from
//! the process environment at backend construction.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::ExperimentConfig;

/// Load and validate a TOML experiment config. Unknown keys are errors, so
/// misspelled options cannot silently fall back to defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&raw)
}

/// Parse TOML config content (the body of [`load_config`]).
pub fn parse_config(raw: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(raw)?;
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

/// Serialize a config back to TOML (defaults included, so the output is a
/// complete self-documenting file).
pub fn config_to_toml(cfg: &ExperimentConfig) -> Result<String, ConfigError> {
    Ok(toml::to_string_pretty(cfg)?)
}

/// Failures of config loading or serialization.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("{0}")]
    Invalid(String),
}
