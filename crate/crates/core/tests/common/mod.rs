#![allow(dead_code)]

use earlywarn::dataset::{FeatureSequence, Sample, ScenarioLabel};
use earlywarn::model::{Dims, ModelParams};
use earlywarn::objective::LossConfig;
use earlywarn::trainer::{
    batch_loss, compute_gradients, normalize_batch, replay, rollout, Batch, EpisodeNoise, ExperimentConfig, Pipeline,
    Rollout,
};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A frozen minibatch: parameters, inputs, diffusion noise and actions.
pub struct GradCase {
    pub config: ExperimentConfig,
    pub pipeline: Pipeline,
    pub loss: LossConfig,
    pub params: ModelParams,
    pub samples: Vec<Sample>,
    pub noises: Vec<EpisodeNoise>,
    pub actions: Vec<Vec<usize>>,
}

pub fn random_sequence(
    rng: &mut ChaCha8Rng,
    n: usize,
    d_img: usize,
    d_obj: usize,
    k: usize,
    fps: f64,
) -> FeatureSequence {
    let image_feats = Array2::from_shape_simple_fn((n, d_img), || rng.sample(StandardNormal));
    let object_feats = Array3::from_shape_simple_fn((n, k, d_obj), || rng.sample(StandardNormal));
    let mut object_mask = Array2::from_shape_simple_fn((n, k), || rng.random_bool(0.7));
    for t in 0..n {
        let keep = rng.random_range(0..k);
        object_mask[[t, keep]] = true;
    }
    FeatureSequence {
        fps,
        image_feats,
        object_feats,
        object_mask,
    }
}

pub fn random_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let d_img = rng.random_range(1..=4);
    let d_obj = rng.random_range(1..=4);
    let k = rng.random_range(1..=2);
    let mut config = ExperimentConfig::default();
    config.model.d_att = rng.random_range(1..=4);
    config.model.d_hidden = rng.random_range(1..=4);
    config.model.d_mlp = rng.random_range(1..=4);
    config.model.diffusion.steps = rng.random_range(1..=4);
    config.model.diffusion.step_embedding = rng.random_bool(0.5);
    config.model.diffusion.aux_weight = if rng.random_bool(0.5) { 0.3 } else { 0.0 };
    config.train.window = rng.random_range(0..=3);
    let a = &mut config.train.ablation;
    a.object_attention = rng.random_bool(0.8);
    a.time_weight = rng.random_bool(0.8);
    a.image_diffusion = rng.random_bool(0.8);
    a.object_diffusion = rng.random_bool(0.8);
    config.loss.negative_scale = rng.random_range(0.5..2.0);
    if rng.random_bool(0.3) {
        config.reward.positive_horizon = Some(rng.random_range(0..=2));
    }
    let pipeline = config.pipeline().unwrap();
    let loss = config.effective_loss();

    let dims = Dims::new(d_img, d_obj, k, &config.model);
    let params = ModelParams::init(dims, rng.random());
    let episodes = rng.random_range(1..=3);
    let fps = 2.0;
    let mut samples = Vec::new();
    let mut noises = Vec::new();
    let mut actions = Vec::new();
    for _ in 0..episodes {
        let sequence = random_sequence(&mut rng, n, d_img, d_obj, k, fps);
        let label = if rng.random_bool(0.5) {
            ScenarioLabel::positive(rng.random_range(1..=n))
        } else {
            ScenarioLabel::negative()
        };
        let r = rollout(&sequence, label, &params, &pipeline, &config.reward, &mut rng).unwrap();
        noises.push(r.noise);
        actions.push(r.trace.actions);
        samples.push(Sample { sequence, label });
    }
    GradCase {
        config,
        pipeline,
        loss,
        params,
        samples,
        noises,
        actions,
    }
}

pub fn replay_all(case: &GradCase, params: &ModelParams) -> Vec<Rollout> {
    let mut rollouts: Vec<Rollout> = case
        .samples
        .iter()
        .zip(&case.noises)
        .zip(&case.actions)
        .map(|((s, noise), acts)| {
            replay(
                &s.sequence,
                s.label,
                params,
                &case.pipeline,
                &case.config.reward,
                noise.clone(),
                acts.clone(),
            )
            .unwrap()
        })
        .collect();
    let mut traces: Vec<_> = rollouts.iter().map(|r| r.trace.clone()).collect();
    normalize_batch(&mut traces, case.config.reward.eps).unwrap();
    for (r, t) in rollouts.iter_mut().zip(traces) {
        r.trace = t;
    }
    rollouts
}

/// Batch objective written out directly from the trace fields. Advantages
/// come from `frozen` so the actor term sees them as constants.
pub fn oracle_loss(case: &GradCase, params: &ModelParams, frozen: &[Vec<f64>]) -> f64 {
    let rollouts = replay_all(case, params);
    let cfg = &case.loss;
    let b = rollouts.len() as f64;
    let m: usize = rollouts.iter().map(|r| r.trace.len()).sum();
    let (mut an, mut actor, mut critic) = (0.0, 0.0, 0.0);
    for (r, adv) in rollouts.iter().zip(frozen) {
        let tr = &r.trace;
        let n = tr.len() as f64;
        let mut episode = 0.0;
        for t in 0..tr.len() {
            let p = tr.probs[t].clamp(cfg.prob_floor, 1.0 - cfg.prob_floor);
            episode += if tr.label.positive {
                let lead = (tr.label.accident_frame as f64 - t as f64 - 1.0) / tr.fps;
                tr.time_weights[t] * (-lead.max(0.0)).exp() * -p.ln()
            } else {
                cfg.negative_scale * -(1.0 - p).ln()
            };
            let pi = &tr.policies[t];
            let h: f64 = -pi.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>();
            actor += -pi[tr.actions[t]].ln() * adv[t] - cfg.entropy_weight * h;
            critic += 0.5 * (tr.normalized_rewards[t] - tr.values[t]).powi(2);
        }
        an += episode / n;
    }
    let an = an / b;
    let actor = actor / m as f64;
    let critic = critic / m as f64;
    let batch = Batch::new(case.samples.iter().collect(), rollouts).unwrap();
    let aux = batch_loss(&batch, &case.pipeline, cfg).unwrap().aux;
    cfg.anticipation_scale * an
        + cfg.alpha * (cfg.actor_scale * actor + cfg.beta * cfg.critic_scale * critic)
        + case.pipeline.aux_weight * aux
}

pub fn frozen_advantages(case: &GradCase) -> Vec<Vec<f64>> {
    replay_all(case, &case.params)
        .iter()
        .map(|r| {
            (0..r.trace.len())
                .map(|t| r.trace.normalized_rewards[t] - r.trace.values[t])
                .collect()
        })
        .collect()
}

pub fn total_loss(case: &GradCase, params: &ModelParams) -> f64 {
    let batch = Batch::new(case.samples.iter().collect(), replay_all(case, params)).unwrap();
    batch_loss(&batch, &case.pipeline, &case.loss).unwrap().total
}

pub fn analytic_gradient(case: &GradCase) -> ModelParams {
    let batch = Batch::new(case.samples.iter().collect(), replay_all(case, &case.params)).unwrap();
    compute_gradients(&batch, &case.params, &case.pipeline, &case.loss).unwrap()
}

/// Worst relative error between analytic and central-difference gradients,
/// with the tensor where it occurs.
#[allow(clippy::needless_range_loop)]
pub fn worst_relative_error(case: &GradCase, step: f64) -> (f64, String) {
    let analytic = analytic_gradient(case);
    let frozen = frozen_advantages(case);
    let mut worst = (0.0, String::new());
    let names: Vec<(&'static str, usize)> = case.params.tensors().iter().map(|(n, t)| (*n, t.len())).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, t)| t.to_vec()).collect();
    for (ti, (name, len)) in names.iter().enumerate() {
        for i in 0..*len {
            let mut plus = case.params.clone();
            plus.tensors_mut()[ti].1[i] += step;
            let mut minus = case.params.clone();
            minus.tensors_mut()[ti].1[i] -= step;
            let numeric = (oracle_loss(case, &plus, &frozen) - oracle_loss(case, &minus, &frozen)) / (2.0 * step);
            let a = grads[ti][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    worst
}
