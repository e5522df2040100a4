//! JSON artifacts, atomic writes, hashing and the run-directory lock.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

/// Environment variable overriding the default output root `runs`.
pub const OUTPUT_ROOT_ENV: &str = "CSDLAB_OUTPUT_ROOT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Reads a JSON file; a missing file is a [`LabError::Missing`].
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(LabError::Missing(path.to_path_buf())),
        Err(e) => return Err(LabError::io(path)(e)),
    };
    serde_json::from_str(&text).map_err(|source| LabError::Json { path: path.to_path_buf(), source })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value).as_bytes())
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(LabError::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(LabError::io(&tmp))?;
    f.write_all(bytes).map_err(LabError::io(&tmp))?;
    f.sync_all().map_err(LabError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(LabError::io(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the compact JSON encoding of `value`.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("artifact types serialize"))
}

/// Exclusive advisory lock on `<dir>/.lock`, released on drop.
#[derive(Debug)]
pub struct RunLock {
    _file: File,
}

pub fn lock_dir(dir: &Path) -> Result<RunLock> {
    fs::create_dir_all(dir).map_err(LabError::io(dir))?;
    let path = dir.join(".lock");
    let file = OpenOptions::new().create(true).truncate(false).write(true).open(&path).map_err(LabError::io(&path))?;
    match file.try_lock() {
        Ok(()) => Ok(RunLock { _file: file }),
        Err(TryLockError::WouldBlock) => Err(LabError::Locked(dir.to_path_buf())),
        Err(TryLockError::Error(e)) => Err(LabError::io(&path)(e)),
    }
}
