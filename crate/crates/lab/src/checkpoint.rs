//! Versioned phase checkpoints.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::files;

pub const FORMAT: &str = "csdlab-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Init,
    Main,
    Dd1,
}

impl Phase {
    pub fn file_name(self) -> &'static str {
        match self {
            Phase::Init => "init.json",
            Phase::Main => "main.json",
            Phase::Dd1 => "dd1.json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<S> {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub phase: Phase,
    /// Whether the phase has used up its budget.
    pub complete: bool,
    pub state: S,
}

impl<S> Checkpoint<S> {
    pub fn new(phase: Phase, config_hash: &str, complete: bool, state: S) -> Self {
        Checkpoint { format: FORMAT.into(), version: VERSION, config_hash: config_hash.into(), phase, complete, state }
    }
}

pub fn save<S: Serialize>(dir: &Path, ckpt: &Checkpoint<S>) -> Result<()> {
    files::write_json(&dir.join(ckpt.phase.file_name()), ckpt)
}

/// Loads the checkpoint of `phase`, or `None` if there is none yet. A
/// checkpoint from another config or format version is a config error.
pub fn load<S: DeserializeOwned>(dir: &Path, phase: Phase, config_hash: &str) -> Result<Option<Checkpoint<S>>> {
    let path = dir.join(phase.file_name());
    let ckpt: Checkpoint<S> = match files::read_json(&path) {
        Ok(c) => c,
        Err(LabError::Missing(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if ckpt.format != FORMAT || ckpt.version != VERSION {
        return Err(LabError::Config(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            ckpt.format,
            ckpt.version
        )));
    }
    if ckpt.config_hash != config_hash || ckpt.phase != phase {
        return Err(LabError::Config(format!(
            "{} was written for a different configuration; use a fresh run directory",
            path.display()
        )));
    }
    Ok(Some(ckpt))
}
