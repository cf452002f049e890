//! Buffered outputs and the run manifest.
//!
//! Commands stage every artifact in memory. Nothing touches the output
//! directory until the command has succeeded, and a failed write removes the
//! files already written, so a run leaves either all of its artifacts or none.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::Command;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Every argument of the run, defaults included; `replay` re-runs it.
    pub config: Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub artifacts: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    /// Writes every artifact and then the manifest into `dir`.
    pub fn commit(self, dir: &Path, config: &Command, started: Instant) -> Result<RunManifest, CliError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written: Vec<PathBuf> = Vec::new();
        let mut result = Ok(());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, bytes).map_err(io(&path)) {
                result = Err(e);
                break;
            }
            written.push(path);
        }
        let manifest = RunManifest {
            command: config.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seed: config.seed(),
            artifacts: written.clone(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        };
        if result.is_ok() {
            let path = dir.join(MANIFEST);
            let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
            result = fs::write(&path, text).map_err(io(&path));
        }
        if let Err(e) = result {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(e);
        }
        Ok(manifest)
    }
}

/// Serialises rows to CSV bytes with a header line.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialise to CSV");
    }
    w.into_inner().expect("in-memory CSV writer")
}
