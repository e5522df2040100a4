use std::io;
use std::path::PathBuf;

/// Errors of the command-line driver, each with a documented exit code.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged in phase {phase} at iteration {iteration}: {detail}")]
    Divergence { phase: String, iteration: u64, detail: String },
    #[error("missing artifact: {}", .0.display())]
    Missing(PathBuf),
    #[error("run directory {} is locked by another process", .0.display())]
    Locked(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Core(csd_core::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const DIVERGENCE: u8 = 4;
    pub const MISSING: u8 = 5;
}

impl LabError {
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Usage(_) => exit::USAGE,
            LabError::Config(_) | LabError::Json { .. } => exit::CONFIG,
            LabError::Divergence { .. } => exit::DIVERGENCE,
            LabError::Missing(_) => exit::MISSING,
            LabError::Locked(_) | LabError::Io { .. } | LabError::Core(_) => exit::FAILURE,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> LabError {
        let path = path.into();
        move |source| LabError::Io { path, source }
    }

    pub fn config(e: impl std::fmt::Display) -> LabError {
        LabError::Config(e.to_string())
    }
}

impl From<csd_core::Error> for LabError {
    fn from(e: csd_core::Error) -> Self {
        match e {
            csd_core::Error::Divergence { phase, iteration, detail } => LabError::Divergence { phase, iteration, detail },
            other => LabError::Core(other),
        }
    }
}
