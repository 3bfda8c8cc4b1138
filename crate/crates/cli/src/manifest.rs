//! Run manifests: enough provenance to reproduce every output file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ConfigFile;
use crate::experiments::Seeds;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved configuration, including the effective seed and scale.
    pub config: ConfigFile,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub scale: f64,
    pub jobs: Option<usize>,
    pub outputs: Vec<OutputFile>,
    pub passed: bool,
    pub summary: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(config: &ConfigFile) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    sha256_hex(text.as_bytes())
}

pub fn describe_outputs(dir: &Path, files: &[PathBuf]) -> std::io::Result<Vec<OutputFile>> {
    files
        .iter()
        .map(|f| {
            let bytes = std::fs::read(f)?;
            let rel = f.strip_prefix(dir).unwrap_or(f);
            Ok(OutputFile {
                path: rel.to_string_lossy().into_owned(),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}
