use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

/// Run record written beside a command's outputs. `argv` plus the input
/// files is enough to repeat the run.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: Value,
    pub outputs: Vec<PathBuf>,
    pub elapsed_seconds: f64,
    pub results: Value,
}

pub struct Recorder {
    command: &'static str,
    start: Instant,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            start: Instant::now(),
        }
    }

    pub fn finish(self, seed: Option<u64>, config: Value, outputs: Vec<PathBuf>, results: Value) -> Manifest {
        Manifest {
            command: self.command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            threads: rayon::current_num_threads(),
            config,
            outputs,
            elapsed_seconds: self.start.elapsed().as_secs_f64(),
            results,
        }
    }
}

/// `<path>.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}
