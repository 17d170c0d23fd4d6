//! Per-run manifest: configuration snapshot, seeds, outputs and wall times.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use uqbench_core::harness::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub status: Status,
    pub seeds: Vec<u64>,
    pub data_seed: u64,
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub settings: Settings,
    #[serde(skip)]
    path: PathBuf,
    #[serde(skip)]
    started: Option<Instant>,
}

impl Manifest {
    /// Writes the manifest immediately so an interrupted run still leaves a record.
    pub fn start(path: PathBuf, settings: &Settings, seeds: Vec<u64>) -> Result<Self> {
        let m = Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: std::env::args().collect(),
            status: Status::Running,
            seeds,
            data_seed: settings.data_seed,
            outputs: vec![path.clone()],
            failures: Vec::new(),
            timings: BTreeMap::new(),
            settings: settings.clone(),
            path,
            started: Some(Instant::now()),
        };
        m.write()?;
        Ok(m)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn add_outputs(&mut self, files: impl IntoIterator<Item = PathBuf>) {
        self.outputs.extend(files);
    }

    pub fn time(&mut self, stage: impl Into<String>, seconds: f64) {
        self.timings.insert(stage.into(), seconds);
    }

    pub fn finish(&mut self, status: Status) -> Result<()> {
        self.status = status;
        if let Some(t) = self.started {
            self.timings.insert("total".into(), t.elapsed().as_secs_f64());
        }
        self.write()
    }

    fn write(&self) -> Result<()> {
        let text = toml::to_string(self).context("serializing manifest")?;
        std::fs::write(&self.path, text).with_context(|| format!("writing {}", self.path.display()))
    }
}
