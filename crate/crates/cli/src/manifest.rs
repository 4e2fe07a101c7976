use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Record written beside every command's outputs; `argv` together with the
/// resolved configuration is enough to repeat the run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    /// Final status line, e.g. the training stop reason.
    pub outcome: String,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_owned(),
            argv: std::env::args().collect(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            started_unix_s: now(),
            finished_unix_s: 0.0,
            outcome: String::new(),
        }
    }

    pub fn config(mut self, value: impl Serialize) -> Self {
        self.config = serde_json::to_value(value).expect("config serializes to JSON");
        self
    }

    pub fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_owned(), seed);
        self
    }

    /// Writes `run_manifest.json` into `dir` via a temporary file and rename.
    pub fn finish(mut self, dir: &Path, outcome: impl Into<String>) -> Result<()> {
        self.finished_unix_s = now();
        self.outcome = outcome.into();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RUN_MANIFEST_FILE);
        let tmp = dir.join(format!(".{RUN_MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
