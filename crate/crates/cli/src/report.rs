//! CSV tables and the JSON run manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use ttdensity_core::{DensityFile, DensityMetadata, LayeredDensity};

use crate::config::{ExperimentConfig, Scenario};

/// A rendered CSV file.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub content: String,
    pub rows: usize,
}

impl Table {
    pub fn from_rows<T: Serialize>(name: &str, rows: &[T]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let content = String::from_utf8(w.into_inner().context("flushing csv")?)?;
        Ok(Table { name: name.to_string(), content, rows: rows.len() })
    }
}

#[derive(Debug, Clone)]
pub struct SavedSurrogate {
    pub name: String,
    pub file: DensityFile,
}

impl SavedSurrogate {
    pub fn new(name: String, density: &LayeredDensity, seed: u64, samples_per_layer: usize, cfg: &ExperimentConfig) -> Self {
        let file = density.to_file(DensityMetadata { seed, samples_per_layer, config_hash: Some(cfg.hash()) });
        SavedSurrogate { name, file }
    }
}

/// Everything a run produces, before it touches the file system.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub config: ExperimentConfig,
    pub tables: Vec<Table>,
    pub summary: serde_json::Value,
    pub surrogates: Vec<SavedSurrogate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: Scenario,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub files: Vec<ManifestFile>,
    pub surrogates: Vec<String>,
    pub summary: serde_json::Value,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunOutput {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        RunOutput {
            scenario: cfg.scenario,
            config: cfg.clone(),
            tables: Vec::new(),
            summary: serde_json::Value::Null,
            surrogates: Vec::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            tool: "ttdensity".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            scenario: self.scenario,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            files: self
                .tables
                .iter()
                .map(|t| ManifestFile { name: t.name.clone(), rows: t.rows, sha256: sha256_hex(t.content.as_bytes()) })
                .collect(),
            surrogates: self.surrogates.iter().map(|s| format!("surrogates/{}.json", s.name)).collect(),
            summary: self.summary.clone(),
        }
    }

    /// Writes tables, surrogates, the config and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for t in &self.tables {
            std::fs::write(dir.join(&t.name), &t.content)?;
        }
        if !self.surrogates.is_empty() {
            let sdir = dir.join("surrogates");
            std::fs::create_dir_all(&sdir)?;
            for s in &self.surrogates {
                std::fs::write(sdir.join(format!("{}.json", s.name)), serde_json::to_string(&s.file)?)?;
            }
        }
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)?)?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(path)
    }
}
