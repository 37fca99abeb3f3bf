//! Episode rollouts, exact gradients through the unrolled pipeline, Adam with
//! a plateau scheduler, checkpoints and the training loop.

mod adam;
mod backprop;
mod checkpoint;
mod plateau;
mod rollout;
mod train;

use serde::{Deserialize, Serialize};

use crate::decision::RewardConfig;
use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::LossConfig;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backprop::{batch_loss, compute_gradients, episode_gradients, Batch};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use plateau::{plateau_schedule, PlateauConfig, PlateauState};
pub use rollout::{
    evaluate, forward_episode, normalize_batch, predict, replay, rollout, EpisodeForward, EpisodeNoise, FrameCache,
    NoiseMode, Rollout,
};
pub use train::{split_indices, train, validation_loss, LogRow, TrainOutcome, Trainer, LOG_HEADER};

/// Module and loss switches; `false` removes the component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub object_attention: bool,
    pub time_weight: bool,
    pub image_diffusion: bool,
    pub object_diffusion: bool,
    pub anticipation_loss: bool,
    pub actor_loss: bool,
    pub critic_loss: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            object_attention: true,
            time_weight: true,
            image_diffusion: true,
            object_diffusion: true,
            anticipation_loss: true,
            actor_loss: true,
            critic_loss: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    /// History window; 0 feeds the latest state straight to the heads.
    pub window: usize,
    pub ablation: Ablation,
    pub seed: u64,
    pub val_fraction: f64,
    /// Seed of the evaluation-time diffusion noise.
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 10,
            lr: 3e-4,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            window: 10,
            ablation: Ablation::default(),
            seed: 0,
            val_fraction: 0.2,
            eval_seed: 0x5eed,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        self.adam.validate()?;
        self.plateau.validate()
    }
}

/// Everything that determines a training run besides the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.reward.validate()?;
        self.train.validate()
    }

    /// Loss configuration with the loss switches applied.
    pub fn effective_loss(&self) -> LossConfig {
        let a = &self.train.ablation;
        let on = |b: bool| if b { 1.0 } else { 0.0 };
        LossConfig {
            anticipation_scale: self.loss.anticipation_scale * on(a.anticipation_loss),
            actor_scale: self.loss.actor_scale * on(a.actor_loss),
            critic_scale: self.loss.critic_scale * on(a.critic_loss),
            ..self.loss.clone()
        }
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        let a = &self.train.ablation;
        Ok(Pipeline {
            schedule: self.model.diffusion.schedule()?,
            eval_step: self.model.diffusion.eval_step(),
            lambda: self.model.diffusion.lambda,
            aux_weight: self.model.diffusion.aux_weight,
            window: self.train.window,
            object_attention: a.object_attention,
            time_weight: a.time_weight,
            image_diffusion: a.image_diffusion,
            object_diffusion: a.object_diffusion,
        })
    }
}

/// Forward-pass settings shared by training and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub schedule: DiffusionSchedule,
    pub eval_step: usize,
    pub lambda: f64,
    pub aux_weight: f64,
    pub window: usize,
    pub object_attention: bool,
    pub time_weight: bool,
    pub image_diffusion: bool,
    pub object_diffusion: bool,
}

/// SplitMix64 finaliser, used to derive independent seeds from counters.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
