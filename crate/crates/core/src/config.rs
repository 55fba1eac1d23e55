//! Experiment configuration as read from and written to JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{ScatterConfig, ScoreWeights};
use crate::alloop::ALConfig;
use crate::baselines::{StrategyConfig, StrategyKind};
use crate::error::{Error, Result};
use crate::learner::TrainConfig;
use crate::world::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub al: ALConfig,
    pub train: TrainConfig,
    pub scatter: ScatterConfig,
    pub weights: ScoreWeights,
    pub baselines: StrategyConfig,
    pub output_dir: PathBuf,
    /// Strategies for comparison runs; empty means just `al.strategy`.
    pub strategies: Vec<StrategyKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            al: ALConfig::default(),
            train: TrainConfig::default(),
            scatter: ScatterConfig::default(),
            weights: ScoreWeights::default(),
            baselines: StrategyConfig::default(),
            output_dir: PathBuf::from("out"),
            strategies: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.al.validate()?;
        self.train.validate()?;
        self.scatter.validate(self.world.grid)?;
        self.weights.validate()?;
        self.baselines.validate()?;
        for spec in &self.train.augmentations {
            spec.validate(self.world.grid)?;
        }
        Ok(())
    }

    pub fn strategies(&self) -> Vec<StrategyKind> {
        if self.strategies.is_empty() {
            vec![self.al.strategy]
        } else {
            self.strategies.clone()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
