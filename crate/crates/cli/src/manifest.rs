//! Per-run record, written last and atomically.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::format::{file_sha256, write_atomic};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub config_hash: String,
    /// The resolved config; running it again reproduces the outputs.
    pub config: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<OutputFile>,
    pub metrics: Value,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn manifest_file(out: &Path, command: &str) -> PathBuf {
    out.join(format!("manifest-{command}.json"))
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, started_unix: u64) -> RunManifest {
        RunManifest {
            command: command.into(),
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash(),
            config: config.to_toml(),
            seed: config.seed,
            started_unix,
            finished_unix: started_unix,
            outputs: Vec::new(),
            metrics: Value::Null,
        }
    }

    /// Records every file relative to `out`, then writes the manifest.
    pub fn finish(mut self, out: &Path, files: &[PathBuf], metrics: Value) -> CliResult<PathBuf> {
        for f in files {
            let meta = std::fs::metadata(f).map_err(|e| CliError::Io(format!("{}: {e}", f.display())))?;
            let rel = f.strip_prefix(out).unwrap_or(f);
            self.outputs.push(OutputFile {
                path: rel.display().to_string(),
                bytes: meta.len(),
                sha256: file_sha256(f)?,
            });
        }
        self.metrics = metrics;
        self.finished_unix = unix_now();
        let path = manifest_file(out, &self.command);
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::Io(e.to_string()))?;
        write_atomic(&path, format!("{text}\n").as_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> CliResult<RunManifest> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}
