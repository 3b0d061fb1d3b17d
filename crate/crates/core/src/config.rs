//! The single run configuration document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::action_space::VocabConfig;
use crate::dpo::DpoConfig;
use crate::error::{Error, Result};
use crate::io::read_string;
use crate::metrics::MetricConfig;
use crate::planner::ModelConfig;
use crate::train::TrainConfig;
use crate::world::WorldConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Root of every artifact directory.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Every section defaults independently; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dpo: DpoConfig,
    pub metrics: MetricConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig::default(),
            vocab: VocabConfig::fast(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dpo: DpoConfig::default(),
            metrics: MetricConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.dpo.validate()?;
        self.metrics.validate()?;
        let w = &self.world;
        if !(w.dt > 0.0) || w.horizon == 0 || w.scenes == 0 || w.kinds.is_empty() {
            return Err(Error::Config("world: need dt > 0 and non-zero horizon, scenes and kinds".into()));
        }
        if !(0.0..1.0).contains(&w.test_fraction) {
            return Err(Error::Config("world: test_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}
