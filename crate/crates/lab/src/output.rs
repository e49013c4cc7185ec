//! Per-run output directory with atomic file writes and the run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::LabError;

pub struct RunDir {
    pub path: PathBuf,
    files: Vec<String>,
    started: Instant,
}

impl RunDir {
    pub fn create(path: PathBuf) -> Result<Self, LabError> {
        std::fs::create_dir_all(&path)?;
        Ok(RunDir {
            path,
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Writes `name` via a temporary file in the same directory and a rename.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), LabError> {
        write_atomic(&self.path.join(name), contents)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), LabError> {
        let s = serde_json::to_string_pretty(value).map_err(|e| LabError::Io(e.to_string()))?;
        self.write(name, s.as_bytes())
    }

    pub fn finish(mut self, config_toml: &str, summary: serde_json::Value) -> Result<PathBuf, LabError> {
        let manifest = Manifest {
            artifact: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: config_hash(config_toml),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            files: self.files.clone(),
            summary,
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(self.path)
    }
}

#[derive(Serialize)]
struct Manifest {
    artifact: &'static str,
    version: &'static str,
    config_hash: String,
    wall_clock_seconds: f64,
    files: Vec<String>,
    summary: serde_json::Value,
}

pub fn config_hash(config_toml: &str) -> String {
    Sha256::digest(config_toml.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), LabError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| LabError::Io(e.to_string()))?;
    Ok(())
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
