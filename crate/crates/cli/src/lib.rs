//! Command implementations behind the `ers` binary.

pub mod bundle;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod manifest;
pub mod report;
pub mod train;

use std::path::Path;

use thiserror::Error;

pub use config::{parse_config, ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Refuses to reuse a directory that already holds files.
pub fn fresh_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?;
        if entries.next().is_some() {
            return Err(CliError::Usage(format!(
                "{} is not empty; every run needs a fresh directory",
                dir.display()
            )));
        }
    }
    Ok(())
}
