//! Reproduction manifests written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::files;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything needed to rerun a command. Holds no timestamps, so identical
/// runs write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub template_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Input path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub counts: BTreeMap<String, usize>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_owned(),
            tool_version: TOOL_VERSION.to_owned(),
            template_version: cfg.endpoint.prompt.version.clone(),
            config_hash: files::sha256_hex(cfg.canonical_json().as_bytes()),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            config: cfg.clone(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_owned(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = files::sha256_hex(&files::read_bytes(path)?);
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_owned());
    }

    pub fn count(&mut self, name: &str, n: usize) {
        self.counts.insert(name.to_owned(), n);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        files::write_json(&dir.join("manifest.json"), self)
    }
}
