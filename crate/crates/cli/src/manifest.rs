//! Run manifests: enough to reproduce a command's outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// SHA-256 of the resolved configuration JSON.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub version: String,
    pub timings: BTreeMap<String, f64>,
    pub inputs: BTreeMap<String, String>,
    /// Command-specific extras such as cached variances or fold assignments.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        let config_hash = hex_digest(config.to_string().as_bytes());
        RunManifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_hash,
            config,
            seeds: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timings: BTreeMap::new(),
            inputs: BTreeMap::new(),
            extra: BTreeMap::new(),
        }
    }

    /// Records the SHA-256 of an input file.
    pub fn add_input(&mut self, label: &str, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs
            .insert(label.to_string(), format!("{}  {}", hex_digest(&bytes), path.display()));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `<path>.manifest.json` next to an output file.
pub fn default_manifest_path(out: &Path) -> std::path::PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
