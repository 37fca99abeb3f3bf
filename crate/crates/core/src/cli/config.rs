use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::GenConfig;
use crate::decision::RewardConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::LossConfig;
use crate::trainer::{ExperimentConfig, TrainConfig};

/// Everything a command can be configured with, loadable from one TOML file.
/// Missing sections and keys take their defaults; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|m| Error::Config(format!("{}: {m}", path.display())))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            loss: self.loss.clone(),
            reward: self.reward.clone(),
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.experiment().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = RunConfig::parse("[train]\nepochs = 3\n[train.ablation]\ntime_weight = false\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert!(!cfg.train.ablation.time_weight);
        assert_eq!(cfg.train.batch_size, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[train]\nepoch = 3\n").is_err());
        assert!(RunConfig::parse("[trainer]\n").is_err());
    }
}
