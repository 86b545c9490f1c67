//! Run configuration: everything that determines an experiment's outputs.
//!
//! A config is loaded from TOML, then individual fields may be overridden;
//! its hash (of the canonical JSON form) is stamped into every artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::features::FeatureSpec;
use crate::ingest::IngestConfig;
use crate::models::ModelFamily;
use crate::synth::SynthConfig;
use crate::tuning::Budget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub workdir: PathBuf,
    pub cities: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            input: None,
            workdir: PathBuf::from("work"),
            cities: None,
            taxonomy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub family: ModelFamily,
    /// TOML search space; the published space for `family` when absent.
    pub space: Option<PathBuf>,
    /// Pinned hyperparameters, applied on top of the space.
    pub overrides: BTreeMap<String, Value>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            family: ModelFamily::Gbt,
            space: None,
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSection {
    pub max_trials: Option<usize>,
    pub max_wall_clock_secs: Option<f64>,
    pub folds: usize,
}

impl Default for BudgetSection {
    fn default() -> Self {
        BudgetSection {
            max_trials: Some(100),
            max_wall_clock_secs: Some(48.0 * 3600.0),
            folds: 3,
        }
    }
}

impl BudgetSection {
    pub fn budget(&self) -> Budget {
        Budget {
            max_trials: self.max_trials,
            max_wall_clock: self.max_wall_clock_secs.map(|s| Duration::from_secs_f64(s.max(0.0))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub folds: u64,
    pub search: u64,
    pub model: u64,
    pub synth: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            split: 42,
            folds: 42,
            search: 42,
            model: 42,
            synth: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub test_fraction: f64,
    pub features: FeatureSpec,
    pub model: ModelSection,
    pub budget: BudgetSection,
    pub seeds: Seeds,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            ingest: IngestConfig::default(),
            test_fraction: 0.2,
            features: FeatureSpec::default(),
            model: ModelSection::default(),
            budget: BudgetSection::default(),
            seeds: Seeds::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, crate::Error> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| crate::Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, crate::Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), crate::Error> {
        self.features.validate()?;
        self.budget.budget().validate()?;
        if self.budget.folds < 2 {
            return Err(crate::Error::Config(format!("folds must be at least 2, got {}", self.budget.folds)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(crate::Error::Config(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction)));
        }
        Ok(())
    }

    /// Canonical JSON; struct fields serialize in declaration order and maps
    /// are ordered, so equal configs give equal text.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("run config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.canonical_json().as_bytes());
        d.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// `run_config.json` with the hash, for echoing into an output folder.
    pub fn write_echo(&self, dir: impl AsRef<Path>) -> Result<(), crate::Error> {
        let path = dir.as_ref().join("run_config.json");
        let doc = serde_json::json!({ "run_config_hash": self.hash(), "config": self });
        std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| crate::Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_keeps_hash() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 16);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::from_toml("[seeds]\nsplit = 7\n[model]\nfamily = \"knn\"\n").unwrap();
        assert_eq!(c.seeds.split, 7);
        assert_eq!(c.seeds.model, 42);
        assert_eq!(c.model.family, ModelFamily::Knn);
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("test_fraction = 1.5\n").is_err());
        assert!(RunConfig::from_toml("[budget]\nfolds = 1\n").is_err());
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
    }
}
