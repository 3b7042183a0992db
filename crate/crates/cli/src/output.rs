//! Artifact writing and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use crate::{Failure, Format};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub presets: BTreeMap<String, String>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub tool_version: String,
    pub format: String,
    pub artifacts: Vec<String>,
    pub wall_clock_s: f64,
}

/// Collects the artifacts of one command inside its output directory.
pub struct Artifacts {
    dir: PathBuf,
    format: Format,
    written: Vec<String>,
    started: Instant,
}

impl Artifacts {
    pub fn new(dir: &Path, format: Format) -> Result<Self, Failure> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_owned(),
            format,
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(name.to_owned());
        Ok(())
    }

    pub fn record(&mut self, name: &str) {
        self.written.push(name.to_owned());
    }

    /// Writes `value` as `<stem>.json`.
    pub fn json<T: Serialize>(&mut self, stem: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
        text.push('\n');
        self.write_bytes(&format!("{stem}.json"), text.as_bytes())
    }

    /// Writes `rows` as `<stem>.csv`, one record per row.
    pub fn csv<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<(), Failure> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(anyhow::Error::from)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.write_bytes(&format!("{stem}.csv"), &bytes)
    }

    /// JSON of `value` or CSV of `rows`, depending on the chosen format.
    pub fn emit<T: Serialize, R: Serialize>(&mut self, stem: &str, value: &T, rows: &[R]) -> Result<(), Failure> {
        match self.format {
            Format::Json => self.json(stem, value),
            Format::Csv => self.csv(stem, rows),
        }
    }

    pub fn finish(self, command: &str, config: Option<&Path>, presets: &[(&str, &str)], seed: u64) -> Result<(), Failure> {
        let manifest = RunManifest {
            command: command.to_owned(),
            config_path: config.map(Path::to_owned),
            presets: presets.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            seed,
            output_dir: self.dir.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            format: match self.format {
                Format::Json => "json".into(),
                Format::Csv => "csv".into(),
            },
            artifacts: self.written,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(anyhow::Error::from)?;
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }
}
