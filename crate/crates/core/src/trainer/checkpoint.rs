use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::plateau::PlateauState;
use super::train::LogRow;
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const CHECKPOINT_VERSION: &str = "1";

/// Complete training state. All randomness is derived from `seed` and the
/// epoch counter, so these fields are enough to resume bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: String,
    pub config: ExperimentConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub seed: u64,
    pub params: ModelParams,
    pub adam: AdamState,
    pub plateau: PlateauState,
    pub best_val_ap: Option<f64>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub log: Vec<LogRow>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numeric(format!("cannot serialise checkpoint: {e}")))
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(format!(
                "unsupported checkpoint version {:?} (expected {CHECKPOINT_VERSION:?})",
                ckpt.version
            ));
        }
        ckpt.config.validate().map_err(|e| e.to_string())?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|m| Error::parse(path, m))
    }
}
