use serde::{Deserialize, Serialize};

use super::{default_grid, mtta, records_ap};
use crate::dataset::{corrupt_dataset, Corruption, Dataset, DEFAULT_IMPULSE_MAGNITUDE};
use crate::error::Result;
use crate::model::ModelParams;
use crate::trainer::{evaluate, train, Ablation, ExperimentConfig, Pipeline};

/// A row label and the corruption it applies; `None` is the clean input.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLevel {
    pub label: String,
    pub corruption: Option<Corruption>,
}

/// Gaussian sigma rows: Original, 0.5, 1.0, 5.0, 10.0, 20.0.
pub fn gaussian_levels() -> Vec<NoiseLevel> {
    let mut levels = vec![NoiseLevel {
        label: "Original".into(),
        corruption: None,
    }];
    levels.extend([0.5, 1.0, 5.0, 10.0, 20.0].map(|sigma| NoiseLevel {
        label: format!("{sigma:.1}"),
        corruption: Some(Corruption::Gaussian { sigma }),
    }));
    levels
}

/// Impulse rows: Original, 10%, 20%, 30%, 50%.
pub fn impulse_levels() -> Vec<NoiseLevel> {
    let mut levels = vec![NoiseLevel {
        label: "Original".into(),
        corruption: None,
    }];
    levels.extend([10, 20, 30, 50].map(|pct| NoiseLevel {
        label: format!("{pct}%"),
        corruption: Some(Corruption::Impulse {
            fraction: pct as f64 / 100.0,
            magnitude: DEFAULT_IMPULSE_MAGNITUDE,
        }),
    }));
    levels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub family: String,
    pub level: String,
    pub ap: f64,
    pub mtta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseTable {
    pub gaussian: Vec<NoiseRow>,
    pub impulse: Vec<NoiseRow>,
}

fn score(params: &ModelParams, data: &Dataset, pipeline: &Pipeline, eval_seed: u64) -> Result<(f64, f64)> {
    let records = evaluate(params, data, pipeline, eval_seed)?;
    Ok((records_ap(&records)?, mtta(&records, &default_grid())?))
}

#[allow(clippy::too_many_arguments)]
fn noise_rows(
    family: &str,
    levels: &[NoiseLevel],
    clean: (f64, f64),
    params: &ModelParams,
    data: &Dataset,
    pipeline: &Pipeline,
    eval_seed: u64,
    noise_seed: u64,
) -> Result<Vec<NoiseRow>> {
    levels
        .iter()
        .map(|level| {
            let (ap, mtta) = match level.corruption {
                None => clean,
                Some(c) => score(params, &corrupt_dataset(data, c, noise_seed)?, pipeline, eval_seed)?,
            };
            Ok(NoiseRow {
                family: family.into(),
                level: level.label.clone(),
                ap,
                mtta,
            })
        })
        .collect()
}

/// Re-evaluates `params` on seeded corrupted copies of `data` for every
/// Gaussian and impulse level. The Original rows are the clean evaluation.
pub fn sweep_noise(
    params: &ModelParams,
    data: &Dataset,
    pipeline: &Pipeline,
    eval_seed: u64,
    noise_seed: u64,
) -> Result<NoiseTable> {
    let clean = score(params, data, pipeline, eval_seed)?;
    Ok(NoiseTable {
        gaussian: noise_rows(
            "gaussian",
            &gaussian_levels(),
            clean,
            params,
            data,
            pipeline,
            eval_seed,
            noise_seed,
        )?,
        impulse: noise_rows(
            "impulse",
            &impulse_levels(),
            clean,
            params,
            data,
            pipeline,
            eval_seed,
            noise_seed,
        )?,
    })
}

/// The full model followed by every "w/o" variant.
pub fn ablation_variants() -> Vec<(&'static str, Ablation)> {
    let full = Ablation::default();
    vec![
        ("Full Model", full),
        (
            "w/o Object Aware Module",
            Ablation {
                object_attention: false,
                ..full
            },
        ),
        (
            "w/o Time Weight Layer",
            Ablation {
                time_weight: false,
                ..full
            },
        ),
        (
            "w/o Anticipation Loss",
            Ablation {
                anticipation_loss: false,
                ..full
            },
        ),
        (
            "w/o Policy Gradient Loss",
            Ablation {
                actor_loss: false,
                ..full
            },
        ),
        (
            "w/o Value Loss",
            Ablation {
                critic_loss: false,
                ..full
            },
        ),
        (
            "w/o Image Diffusion",
            Ablation {
                image_diffusion: false,
                ..full
            },
        ),
        (
            "w/o Object Diffusion",
            Ablation {
                object_diffusion: false,
                ..full
            },
        ),
        (
            "w/o All Diffusion",
            Ablation {
                image_diffusion: false,
                object_diffusion: false,
                ..full
            },
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub ap: f64,
    pub mtta: f64,
    /// Gaussian levels, clean row first.
    pub gaussian: Vec<NoiseRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Trains each variant from the same seed and scores its final parameters
/// on its validation split, clean and under the Gaussian grid.
pub fn sweep_ablation(data: &Dataset, base: &ExperimentConfig, noise_seed: u64) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for (name, ablation) in ablation_variants() {
        let mut cfg = base.clone();
        cfg.train.ablation = ablation;
        let out = train(data, &cfg)?;
        let ckpt = &out.final_checkpoint;
        let val = data.subset(&ckpt.val_indices);
        let pipeline = cfg.pipeline()?;
        let clean = score(&ckpt.params, &val, &pipeline, cfg.train.eval_seed)?;
        let gaussian = noise_rows(
            "gaussian",
            &gaussian_levels(),
            clean,
            &ckpt.params,
            &val,
            &pipeline,
            cfg.train.eval_seed,
            noise_seed,
        )?;
        rows.push(AblationRow {
            variant: name.into(),
            ap: clean.0,
            mtta: clean.1,
            gaussian,
        });
    }
    Ok(AblationTable { rows })
}

/// Multipliers on the reward decay constant and on the penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSetting {
    pub reward_multiplier: f64,
    pub penalty_multiplier: f64,
}

/// The seven reward/penalty settings, baseline first.
pub fn reward_settings() -> Vec<RewardSetting> {
    [
        (1.0, 1.0),
        (10.0, 1.0),
        (50.0, 1.0),
        (0.1, 1.0),
        (0.02, 1.0),
        (1.0, 10.0),
        (1.0, 0.1),
    ]
    .map(|(r, p)| RewardSetting {
        reward_multiplier: r,
        penalty_multiplier: p,
    })
    .to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub reward_multiplier: f64,
    pub penalty_multiplier: f64,
    pub decay: f64,
    pub penalty: f64,
    pub ap: f64,
    pub mtta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub rows: Vec<RewardRow>,
}

pub fn sweep_reward(data: &Dataset, base: &ExperimentConfig, settings: &[RewardSetting]) -> Result<RewardTable> {
    let mut rows = Vec::new();
    for s in settings {
        let mut cfg = base.clone();
        cfg.reward.decay = base.reward.decay * s.reward_multiplier;
        cfg.reward.penalty = base.reward.penalty * s.penalty_multiplier;
        let out = train(data, &cfg)?;
        let ckpt = &out.final_checkpoint;
        let val = data.subset(&ckpt.val_indices);
        let (ap, mtta) = score(&ckpt.params, &val, &cfg.pipeline()?, cfg.train.eval_seed)?;
        rows.push(RewardRow {
            reward_multiplier: s.reward_multiplier,
            penalty_multiplier: s.penalty_multiplier,
            decay: cfg.reward.decay,
            penalty: cfg.reward.penalty,
            ap,
            mtta,
        });
    }
    Ok(RewardTable { rows })
}
