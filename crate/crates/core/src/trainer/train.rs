use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::backprop::{batch_loss, compute_gradients, Batch};
use super::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use super::plateau::PlateauState;
use super::rollout::{evaluate, normalize_batch, rollout, rollout_with_noise, EpisodeNoise, NoiseMode};
use super::{mix_seed, ExperimentConfig, Pipeline};
use crate::dataset::{stream_rng, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{default_grid, mtta, records_ap};
use crate::model::{Dims, ModelParams};
use crate::objective::{batch_losses, LossBreakdown, LossConfig};

pub const LOG_HEADER: [&str; 8] = [
    "epoch", "L_an", "L_actor", "L_critic", "L_total", "lr", "val_AP", "val_mTTA",
];

const INIT_TAG: u64 = 1;
const SPLIT_TAG: u64 = 2;
const SHUFFLE_TAG: u64 = 3;
const ROLLOUT_TAG: u64 = 4;
const VAL_TAG: u64 = 5;

/// One epoch of the training log. Losses are means over the epoch's
/// minibatches; `lr` is the rate used during the epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    #[serde(rename = "L_an")]
    pub l_an: f64,
    #[serde(rename = "L_actor")]
    pub l_actor: f64,
    #[serde(rename = "L_critic")]
    pub l_critic: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
    pub lr: f64,
    #[serde(rename = "val_AP")]
    pub val_ap: f64,
    #[serde(rename = "val_mTTA")]
    pub val_mtta: f64,
}

/// Seeded stratified split; each class contributes `round(n * fraction)`
/// videos to validation, at least one when the class has two or more.
pub fn split_indices(dataset: &Dataset, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream_rng(mix_seed(&[seed, SPLIT_TAG]), 0);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for positive in [true, false] {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.samples[i].label.positive == positive)
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let mut n_val = (n as f64 * val_fraction).round() as usize;
        if n >= 2 {
            n_val = n_val.clamp(1, n - 1);
        } else {
            n_val = 0;
        }
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Loss of the validation set rolled out with evaluation noise and a fixed
/// action stream, normalised as a single batch.
pub fn validation_loss(
    params: &ModelParams,
    val: &Dataset,
    pipeline: &Pipeline,
    cfg: &ExperimentConfig,
    loss_cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let mut traces = val
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream_rng(mix_seed(&[cfg.train.seed, VAL_TAG, i as u64]), 0);
            let noise = EpisodeNoise::sample(&mut rng, &s.sequence, pipeline, NoiseMode::Eval);
            rollout_with_noise(&s.sequence, s.label, params, pipeline, &cfg.reward, noise, &mut rng).map(|r| r.trace)
        })
        .collect::<Result<Vec<_>>>()?;
    normalize_batch(&mut traces, cfg.reward.eps)?;
    batch_losses(&traces, loss_cfg)
}

/// Stateful training loop; one call to [`Trainer::run_epoch`] per epoch.
pub struct Trainer<'a> {
    config: ExperimentConfig,
    pipeline: Pipeline,
    loss_cfg: LossConfig,
    dataset: &'a Dataset,
    train_indices: Vec<usize>,
    val_indices: Vec<usize>,
    val_set: Dataset,
    params: ModelParams,
    adam: AdamState,
    plateau: PlateauState,
    epoch: usize,
    best_val_ap: Option<f64>,
    best: Option<Checkpoint>,
    log: Vec<LogRow>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let (train_indices, val_indices) = split_indices(dataset, config.train.val_fraction, config.train.seed);
        if train_indices.is_empty() || val_indices.is_empty() {
            return Err(Error::Domain(format!(
                "dataset of {} videos is too small for a train/validation split",
                dataset.len()
            )));
        }
        let dims = Dims::new(dataset.d_img(), dataset.d_obj(), dataset.max_objects(), &config.model);
        let params = ModelParams::init(dims, mix_seed(&[config.train.seed, INIT_TAG]));
        let adam = AdamState::new(&params);
        let plateau = PlateauState::new(config.train.lr);
        Self::assemble(
            dataset,
            config,
            train_indices,
            val_indices,
            params,
            adam,
            plateau,
            0,
            None,
            Vec::new(),
        )
    }

    /// Continues from a checkpoint taken on the same dataset.
    pub fn resume(dataset: &'a Dataset, ckpt: Checkpoint) -> Result<Self> {
        dataset.validate()?;
        if let Some(&i) = ckpt
            .train_indices
            .iter()
            .chain(&ckpt.val_indices)
            .find(|&&i| i >= dataset.len())
        {
            return Err(Error::Domain(format!(
                "checkpoint refers to video {i} but the dataset has {}",
                dataset.len()
            )));
        }
        let dims = Dims::new(
            dataset.d_img(),
            dataset.d_obj(),
            dataset.max_objects(),
            &ckpt.config.model,
        );
        if dims != ckpt.params.dims {
            return Err(Error::Domain("checkpoint dimensions do not match the dataset".into()));
        }
        Self::assemble(
            dataset,
            ckpt.config,
            ckpt.train_indices,
            ckpt.val_indices,
            ckpt.params,
            ckpt.adam,
            ckpt.plateau,
            ckpt.epoch,
            ckpt.best_val_ap,
            ckpt.log,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        dataset: &'a Dataset,
        config: ExperimentConfig,
        train_indices: Vec<usize>,
        val_indices: Vec<usize>,
        params: ModelParams,
        adam: AdamState,
        plateau: PlateauState,
        epoch: usize,
        best_val_ap: Option<f64>,
        log: Vec<LogRow>,
    ) -> Result<Self> {
        let pipeline = config.pipeline()?;
        let loss_cfg = config.effective_loss();
        let val_set = dataset.subset(&val_indices);
        if val_set.count_positive() == 0 || val_set.count_positive() == val_set.len() {
            return Err(Error::Domain("validation split must contain both classes".into()));
        }
        Ok(Self {
            config,
            pipeline,
            loss_cfg,
            dataset,
            train_indices,
            val_indices,
            val_set,
            params,
            adam,
            plateau,
            epoch,
            best_val_ap,
            best: None,
            log,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn val_set(&self) -> &Dataset {
        &self.val_set
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.train.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            config: self.config.clone(),
            epoch: self.epoch,
            seed: self.config.train.seed,
            params: self.params.clone(),
            adam: self.adam.clone(),
            plateau: self.plateau.clone(),
            best_val_ap: self.best_val_ap,
            train_indices: self.train_indices.clone(),
            val_indices: self.val_indices.clone(),
            log: self.log.clone(),
        }
    }

    /// Checkpoint with the highest validation AP seen in this session.
    pub fn best_checkpoint(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    fn train_batch(&mut self, epoch: usize, batch_no: usize, indices: &[usize]) -> Result<LossBreakdown> {
        let seed = self.config.train.seed;
        let samples: Vec<_> = indices.iter().map(|&i| &self.dataset.samples[i]).collect();
        let params = &self.params;
        let pipeline = &self.pipeline;
        let reward = &self.config.reward;
        let mut rollouts = samples
            .par_iter()
            .enumerate()
            .map(|(slot, s)| {
                let mut rng = stream_rng(
                    mix_seed(&[seed, ROLLOUT_TAG, epoch as u64, batch_no as u64, slot as u64]),
                    0,
                );
                rollout(&s.sequence, s.label, params, pipeline, reward, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut traces: Vec<_> = rollouts.iter().map(|r| r.trace.clone()).collect();
        normalize_batch(&mut traces, reward.eps)?;
        for (r, t) in rollouts.iter_mut().zip(traces) {
            r.trace = t;
        }
        let batch = Batch::new(samples, rollouts)?;
        let losses = batch_loss(&batch, pipeline, &self.loss_cfg)?;
        let grads = compute_gradients(&batch, params, pipeline, &self.loss_cfg)?;
        adam_step(
            &mut self.params,
            &grads,
            &mut self.adam,
            self.plateau.lr,
            &self.config.train.adam,
        );
        Ok(losses)
    }

    /// Runs one epoch, evaluates on the validation split, steps the
    /// scheduler and appends a log row.
    pub fn run_epoch(&mut self) -> Result<LogRow> {
        let epoch = self.epoch + 1;
        let lr = self.plateau.lr;
        let mut order = self.train_indices.clone();
        order.shuffle(&mut stream_rng(
            mix_seed(&[self.config.train.seed, SHUFFLE_TAG, epoch as u64]),
            0,
        ));

        let mut sums = [0.0; 4];
        let mut batches = 0;
        for (b, chunk) in order.chunks(self.config.train.batch_size).enumerate() {
            let l = self.train_batch(epoch, b, chunk)?;
            for (s, v) in sums.iter_mut().zip([l.anticipation, l.actor, l.critic, l.total]) {
                *s += v;
            }
            batches += 1;
        }
        let [l_an, l_actor, l_critic, l_total] = sums.map(|s| s / batches as f64);

        let records = evaluate(&self.params, &self.val_set, &self.pipeline, self.config.train.eval_seed)?;
        let val_ap = records_ap(&records)?;
        let val_mtta = mtta(&records, &default_grid())?;
        let val_loss = validation_loss(
            &self.params,
            &self.val_set,
            &self.pipeline,
            &self.config,
            &self.loss_cfg,
        )?;
        self.plateau.step(val_loss.total, &self.config.train.plateau);

        let row = LogRow {
            epoch,
            l_an,
            l_actor,
            l_critic,
            l_total,
            lr,
            val_ap,
            val_mtta,
        };
        self.log.push(row.clone());
        self.epoch = epoch;
        if self.best_val_ap.is_none_or(|best| val_ap > best) {
            self.best_val_ap = Some(val_ap);
            self.best = Some(self.checkpoint());
        }
        Ok(row)
    }
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub initial: Checkpoint,
    pub final_checkpoint: Checkpoint,
    /// Highest validation AP; the initial checkpoint when no epoch ran.
    pub best: Checkpoint,
    pub log: Vec<LogRow>,
}

pub fn train(dataset: &Dataset, config: &ExperimentConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, config.clone())?;
    let initial = trainer.checkpoint();
    while !trainer.is_done() {
        trainer.run_epoch()?;
    }
    let final_checkpoint = trainer.checkpoint();
    let best = trainer.best_checkpoint().cloned().unwrap_or_else(|| initial.clone());
    Ok(TrainOutcome {
        initial,
        final_checkpoint,
        best,
        log: trainer.log,
    })
}
