mod analysis;
mod data;
mod learn;

use std::path::{Path, PathBuf};

pub use analysis::{permtest, verify};
pub use data::{eap, gen_data};
pub use learn::{eval, train};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_file, unix_now, RunManifest};
use crate::{CommonArgs, Outcome};

/// Resolved config and output location of one command invocation.
pub(crate) struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub force: bool,
    pub command: &'static str,
    started: u64,
}

impl Context {
    pub fn new(args: &CommonArgs, command: &'static str) -> CliResult<Context> {
        let started = unix_now();
        let cfg = ExperimentConfig::load(&args.config)?.resolve(args.seed)?;
        let out = args
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .ok_or_else(|| CliError::Usage("no output directory: pass --out or set `out` in the config".into()))?;
        Ok(Context { cfg, out, force: args.force, command, started })
    }

    /// Refuses to overwrite any of `outputs` unless `--force` was given.
    pub fn guard(&self, outputs: &[&str]) -> CliResult<()> {
        if self.force {
            return Ok(());
        }
        let mut existing: Vec<PathBuf> = outputs.iter().map(|o| self.out.join(o)).filter(|p| p.exists()).collect();
        let manifest = manifest_file(&self.out, self.command);
        if manifest.exists() {
            existing.push(manifest);
        }
        if let Some(p) = existing.first() {
            return Err(CliError::Usage(format!("{} exists; rerun with --force to overwrite", p.display())));
        }
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::Io(format!("{}: {e}", self.out.display())))?;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn finish(&self, files: &[PathBuf], metrics: serde_json::Value, summary: String) -> CliResult<Outcome> {
        let manifest = RunManifest::new(self.command, &self.cfg, self.started).finish(&self.out, files, metrics)?;
        Ok(Outcome { summary, manifest })
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<PathBuf> {
    crate::format::write_atomic(path, text.as_bytes())?;
    Ok(path.to_path_buf())
}
