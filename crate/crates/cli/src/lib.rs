//! Subcommands of the `voyager-sim` binary.

pub mod report;
pub mod risk;
pub mod simulate;
pub mod sweep;

use std::path::{Path, PathBuf};

use thiserror::Error;
use voyager_core::config::{ConfigError, ScenarioConfig};

/// Environment variable that overrides the default output root.
pub const OUT_ENV: &str = "VOYAGER_SIM_OUT";
pub const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input; exit status 2.
    #[error("{0}")]
    Schema(String),
    /// Failure while running; exit status 1.
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Schema(e.to_string())
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

/// Reads and validates a scenario file, applying an optional seed override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ScenarioConfig::from_toml_str(&text)
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Name used for default output directories: the config file stem.
pub fn config_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}
