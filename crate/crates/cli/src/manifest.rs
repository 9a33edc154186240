use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        Self { path: path.to_path_buf(), bytes: bytes.len() as u64, sha256: digest.iter().map(|b| format!("{b:02x}")).collect() }
    }
}

/// What a run did, with enough detail to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    /// The fully resolved configuration after flag overrides.
    pub config: Config,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
    /// Seconds per phase, plus `total`.
    pub timings: BTreeMap<String, f64>,
}

/// Collects a run's inputs, timings and pending outputs; nothing touches the
/// output directory until [`Run::finish`].
pub struct Run {
    command: String,
    config: Config,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<(PathBuf, Vec<u8>)>,
    started_at: String,
    clock: Instant,
    phase: Instant,
    timings: BTreeMap<String, f64>,
}

impl Run {
    pub fn new(command: &str, config: Config) -> Self {
        Self {
            command: command.into(),
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            clock: Instant::now(),
            phase: Instant::now(),
            timings: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn seed(&mut self, name: &str, value: u64) -> u64 {
        self.seeds.insert(name.into(), value);
        value
    }

    /// Read an input file and record its digest.
    pub fn read_input(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(FileDigest::of(path, &bytes));
        Ok(bytes)
    }

    pub fn lap(&mut self, name: &str) {
        self.timings.insert(name.into(), self.phase.elapsed().as_secs_f64());
        self.phase = Instant::now();
    }

    pub fn output(&mut self, name: &str, bytes: Vec<u8>) {
        let path = self.config.out_dir().join(name);
        self.outputs.push((path, bytes));
    }

    pub fn output_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.output(name, bytes);
        Ok(())
    }

    /// Write every output atomically, then the manifest. Returns the artifact paths.
    pub fn finish(mut self) -> anyhow::Result<Vec<PathBuf>> {
        self.lap("compute");
        let dir = self.config.out_dir();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut artifacts = Vec::new();
        for (path, bytes) in &self.outputs {
            routed_mlp::io::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
            artifacts.push(FileDigest::of(path, bytes));
        }
        self.lap("write");
        self.timings.insert("total".into(), self.clock.elapsed().as_secs_f64());
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            argv: std::env::args().collect(),
            config: self.config.clone(),
            seeds: self.seeds,
            inputs: self.inputs,
            artifacts,
            started_at: self.started_at,
            finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            timings: self.timings,
        };
        let path = dir.join(format!("manifest-{}.json", self.command));
        routed_mlp::io::write_json(&path, &manifest)?;
        let mut written: Vec<PathBuf> = self.outputs.into_iter().map(|(p, _)| p).collect();
        written.push(path);
        Ok(written)
    }
}
