//! Output directory handling: atomic file writes and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

pub const OUTPUT_ENV: &str = "TAL_OUTPUT_DIR";
pub const DEFAULT_OUTPUT: &str = "tal-output";
pub const MANIFEST: &str = "manifest.json";

/// Flag, then spec, then `TAL_OUTPUT_DIR`, then `./tal-output`.
pub fn resolve_output_dir(flag: Option<PathBuf>, from_spec: Option<PathBuf>) -> PathBuf {
    flag.or(from_spec)
        .or_else(|| std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

/// Files produced by one command, buffered until the computation succeeds.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    /// Writes every file plus the manifest; each file appears all at once.
    pub fn commit(self, dir: &Path, manifest: Manifest) -> CliResult<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut manifest = manifest;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            manifest.files.insert(name.clone(), hex::encode(Sha256::digest(bytes)));
            written.push(write_atomic(dir, name, bytes)?);
        }
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        written.push(write_atomic(dir, MANIFEST, text.as_bytes())?);
        Ok(written)
    }
}

pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
    let target = dir.join(name);
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
    Ok(target)
}

/// Everything needed to regenerate a run's files. No timestamps or host data.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub library_version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec_sha256: Option<String>,
    pub seeds: Vec<u64>,
    /// Fully resolved parameters, defaults included.
    pub parameters: serde_json::Value,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seeds: Vec<u64>, parameters: serde_json::Value) -> Self {
        Self {
            tool: "tal",
            tool_version: env!("CARGO_PKG_VERSION"),
            library_version: tal_core::VERSION,
            command: command.to_string(),
            spec_sha256: None,
            seeds,
            parameters,
            files: BTreeMap::new(),
        }
    }
}
