//! Run configuration: a TOML file whose values command-line flags override.

use std::path::{Path, PathBuf};

use coe_core::annotate::AnnotatorConfig;
use coe_core::augment::AugConfig;
use coe_core::dataset::{DistractorPolicy, DEFAULT_K};
use coe_core::MatchConfig;
use serde::{Deserialize, Serialize};

use crate::capture::SessionConfig;
use crate::client::EndpointConfig;
use crate::error::{HarnessError, Result};
use crate::files;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub candidate_seed: u64,
    pub k: usize,
    pub policy: DistractorPolicy,
    pub concurrency: usize,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub endpoint: EndpointConfig,
    pub capture: SessionConfig,
    pub augment: AugConfig,
    pub annotator: AnnotatorConfig,
    pub training: TrainingConfig,
    pub build: BuildConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            pool: None,
            candidates: None,
            predictions: None,
            output_dir: PathBuf::from("out"),
            candidate_seed: 0,
            k: DEFAULT_K,
            policy: DistractorPolicy::GlobalPool,
            concurrency: 4,
            matching: MatchConfig::default(),
            endpoint: EndpointConfig::default(),
            capture: SessionConfig::default(),
            augment: AugConfig::default(),
            annotator: AnnotatorConfig::default(),
            training: TrainingConfig::default(),
            build: BuildConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    One,
    Two,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub phase: Phase,
    pub seed: u64,
    /// Extra phase-2 copies at each longest side, in pixels.
    pub resolutions: Vec<u32>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            phase: Phase::Both,
            seed: 0,
            resolutions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    /// Records with supporting-fact sentences, one per line.
    pub pending: Option<PathBuf>,
    /// Directory of PNG + JSON page snapshots.
    pub snapshots: Option<PathBuf>,
    /// Optional tab-separated `doc_id<TAB>url` list captured into `snapshots` first.
    pub urls: Option<PathBuf>,
    /// When set, also write an entity-chain train/test split.
    pub test_fraction: Option<f64>,
    pub split_seed: u64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&files::read_text(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(HarnessError::ConfigInvalid(m));
        if self.k == 0 {
            return invalid("k must be positive".into());
        }
        if self.concurrency == 0 {
            return invalid("concurrency must be positive".into());
        }
        self.matching.validate()?;
        self.augment.validate()?;
        self.annotator.validate()?;
        self.endpoint.validate()?;
        if let Some(f) = self.build.test_fraction {
            if !(0.0..=1.0).contains(&f) {
                return invalid(format!("test_fraction must be in [0, 1], got {f}"));
            }
        }
        Ok(())
    }

    /// Path of a required input, checked to exist.
    pub fn require(&self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        let path = value
            .clone()
            .ok_or_else(|| HarnessError::ConfigInvalid(format!("{field} is required")))?;
        if !path.exists() {
            return Err(HarnessError::ConfigInvalid(format!("{field} {} does not exist", path.display())));
        }
        Ok(path)
    }

    /// Canonical JSON used for hashing; identical configs hash identically.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
