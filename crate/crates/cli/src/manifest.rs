//! Output directory bookkeeping and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::io::{sha256_hex, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub outputs: Vec<OutputEntry>,
    pub checks: Vec<Check>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Collects outputs of one command; writes are sequential.
pub struct Run {
    dir: PathBuf,
    command: String,
    config: RunConfig,
    hash: String,
    outputs: Vec<OutputEntry>,
    checks: Vec<Check>,
}

impl Run {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        let dir = config.paths.out.clone();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            command: command.to_string(),
            config: config.portable(),
            hash: config.hash(),
            outputs: Vec::new(),
            checks: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn store(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(OutputEntry { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    /// Write a table with the command and config hash added to its header.
    pub fn table(&mut self, name: &str, mut t: Table) -> Result<PathBuf> {
        t.meta.insert("config_hash".into(), self.hash.clone());
        t.meta.insert("command".into(), self.command.clone());
        let text = t.render();
        self.store(name, text.as_bytes())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut doc = BTreeMap::new();
        doc.insert("config_hash", serde_json::Value::String(self.hash.clone()));
        doc.insert("command", serde_json::Value::String(self.command.clone()));
        doc.insert("result", serde_json::to_value(value)?);
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        self.store(name, text.as_bytes())
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.to_string(), passed, detail: detail.into() });
    }

    /// Write `manifest.json` and return its contents.
    pub fn finish(self) -> Result<Manifest> {
        let run_id = sha256_hex(format!("{}\n{}", self.command, self.hash).as_bytes())[..16].to_string();
        let m = Manifest {
            run_id,
            command: self.command,
            config_hash: self.hash,
            config: self.config,
            outputs: self.outputs,
            checks: self.checks,
        };
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(m)
    }
}
