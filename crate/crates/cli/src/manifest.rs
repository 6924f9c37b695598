use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use xmreid::Result;

/// Written as `run.json` next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<String>,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub struct Recorder {
    dir: PathBuf,
    command: String,
    seed: u64,
    config: serde_json::Value,
    started: u64,
    outputs: Vec<String>,
}

impl Recorder {
    pub fn new(dir: &Path, command: &str, seed: u64, config: impl Serialize) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.into(),
            seed,
            config: serde_json::to_value(config)?,
            started: now(),
            outputs: Vec::new(),
        })
    }

    /// Path of an output file, registered in the manifest.
    pub fn output(&mut self, name: &str) -> Result<PathBuf> {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn finish(self) -> Result<()> {
        let m = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config: self.config,
            started_unix: self.started,
            finished_unix: now(),
            outputs: self.outputs,
        };
        fs::write(self.dir.join("run.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }
}
