//! Run manifest written next to every subcommand's outputs.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub started_at: String,
    pub wall_seconds: f64,
    /// The fully resolved configuration, after defaults and flag overrides.
    pub config: RunConfig,
    pub outputs: Vec<OutputFile>,
    pub notes: Vec<String>,
}

/// Collects outputs during a run and writes `manifest.json` at the end.
pub struct Recorder {
    dir: PathBuf,
    subcommand: String,
    started: Instant,
    started_at: String,
    outputs: Vec<PathBuf>,
    pub notes: Vec<String>,
}

impl Recorder {
    pub fn new(dir: &Path, subcommand: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let started_at = chrono::DateTime::from_timestamp(now.as_secs() as i64, 0)
            .map(|t| t.to_rfc3339())
            .unwrap_or_default();
        Ok(Self {
            dir: dir.to_path_buf(),
            subcommand: subcommand.into(),
            started: Instant::now(),
            started_at,
            outputs: Vec::new(),
            notes: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Creates `name` in the output directory and registers it.
    pub fn create(&mut self, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
        let p = self.path(name);
        let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        self.outputs.push(p);
        Ok(std::io::BufWriter::new(f))
    }

    /// Registers a file written by other code.
    pub fn register(&mut self, name: &str) {
        self.outputs.push(self.path(name));
    }

    pub fn finish(self, config: &RunConfig) -> Result<()> {
        let mut outputs = Vec::new();
        for p in &self.outputs {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            outputs.push(OutputFile {
                path: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                bytes: bytes.len() as u64,
                sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
            });
        }
        let manifest = Manifest {
            tool: "ebpois",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            argv: std::env::args().collect(),
            seed: config.run.seed,
            threads: rayon::current_num_threads(),
            started_at: self.started_at,
            wall_seconds: self.started.elapsed().as_secs_f64(),
            config: config.clone(),
            outputs,
            notes: self.notes,
        };
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
