//! Run manifests: the one output file allowed to differ between reruns
//! (timestamps only).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_runtime, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: u64,
    pub fnv64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub started_at: String,
    pub finished_at: String,
    pub versions: std::collections::BTreeMap<String, String>,
    pub outputs: Vec<OutputEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

pub struct ManifestBuilder {
    run_id: String,
    config_hash: String,
    started_at: chrono::DateTime<chrono::Utc>,
    outputs: Vec<OutputEntry>,
    converged: Option<bool>,
}

impl ManifestBuilder {
    pub fn start(config_hash: &str, run_seed: u64) -> ManifestBuilder {
        ManifestBuilder {
            run_id: format!("{config_hash}-{run_seed}"),
            config_hash: config_hash.to_string(),
            started_at: chrono::Utc::now(),
            outputs: Vec::new(),
            converged: None,
        }
    }

    /// Record an output file's size and content fingerprint.
    pub fn add_output(&mut self, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(|e| io_runtime(path, e))?;
        self.outputs.push(OutputEntry {
            path: path.display().to_string(),
            bytes: bytes.len() as u64,
            fnv64: format!("{:016x}", marketsim_core::seed::fnv1a64(&bytes)),
        });
        Ok(())
    }

    pub fn set_converged(&mut self, converged: bool) {
        self.converged = Some(converged);
    }

    pub fn finish(self, out_path: &PathBuf) -> CliResult<RunManifest> {
        let mut versions = std::collections::BTreeMap::new();
        versions.insert("core".to_string(), marketsim_core::VERSION.to_string());
        versions.insert("cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let manifest = RunManifest {
            run_id: self.run_id,
            config_hash: self.config_hash,
            started_at: self.started_at.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            versions,
            outputs: self.outputs,
            converged: self.converged,
        };
        let text = serde_json::to_string_pretty(&manifest)
            .expect("manifest serializes");
        std::fs::write(out_path, text).map_err(|e| io_runtime(out_path, e))?;
        Ok(manifest)
    }
}
