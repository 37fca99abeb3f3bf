use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;

use super::{mix_seed, Pipeline};
use crate::attention::{attend, uniform, Attended};
use crate::dataset::{stream_rng, Dataset, FeatureSequence, ScenarioLabel};
use crate::decision::{policy_logits, reward, sample_action, target_action, value, RewardConfig};
use crate::diffusion::{enhance_with_noise, sample_timestep, standard_normal, Enhanced};
use crate::error::{Error, Result};
use crate::math::{entropy, softmax};
use crate::metrics::PredictionRecord;
use crate::model::ModelParams;
use crate::objective::EpisodeTrace;
use crate::temporal::{fuse_inputs, gru_forward, predict_prob_traced, time_weight, GruStep, HistoryBuffer, ProbTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// Diffusion step drawn uniformly per frame.
    Train,
    /// Fixed evaluation step.
    Eval,
}

/// Diffusion steps and forward-process noise for every frame of an episode.
/// Held fixed when differentiating.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeNoise {
    pub steps: Vec<usize>,
    /// `N x d_img`
    pub image: Array2<f64>,
    /// `N x K x d_obj`
    pub objects: Array3<f64>,
}

impl EpisodeNoise {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, seq: &FeatureSequence, pipeline: &Pipeline, mode: NoiseMode) -> Self {
        let n = seq.frames();
        let steps = (0..n)
            .map(|_| match mode {
                NoiseMode::Train => sample_timestep(rng, pipeline.schedule.steps),
                NoiseMode::Eval => pipeline.eval_step,
            })
            .collect();
        let image = standard_normal(rng, n * seq.d_img())
            .into_shape_with_order((n, seq.d_img()))
            .expect("sized");
        let objects = standard_normal(rng, n * seq.max_objects() * seq.d_obj())
            .into_shape_with_order((n, seq.max_objects(), seq.d_obj()))
            .expect("sized");
        Self { steps, image, objects }
    }
}

/// Cached activations of one frame.
#[derive(Clone, Debug)]
pub struct FrameCache {
    pub h_prev: Array1<f64>,
    pub attended: Attended,
    pub image_enhanced: Option<Enhanced>,
    /// Per object slot; `None` for absent objects or when object diffusion is off.
    pub object_enhanced: Vec<Option<Enhanced>>,
    pub fused: Array1<f64>,
    pub gru: GruStep,
    pub prob: ProbTrace,
    pub omega: f64,
    pub summary: Array1<f64>,
    pub policy: Array1<f64>,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct EpisodeForward {
    pub frames: Vec<FrameCache>,
}

impl EpisodeForward {
    pub fn probs(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.prob.prob).collect()
    }

    pub fn hidden(&self, t: usize) -> &Array1<f64> {
        &self.frames[t].gru.hidden
    }
}

/// Runs attention, enhancement, fusion, the recurrence and all heads over
/// every frame with the given noise.
pub fn forward_episode(
    params: &ModelParams,
    seq: &FeatureSequence,
    pipeline: &Pipeline,
    noise: &EpisodeNoise,
) -> Result<EpisodeForward> {
    let n = seq.frames();
    if noise.steps.len() != n {
        return Err(Error::Shape {
            context: "episode noise frames",
            expected: n,
            actual: noise.steps.len(),
        });
    }
    let mut h = Array1::zeros(params.dims.d_hidden);
    let mut history = HistoryBuffer::new(pipeline.window);
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let at_frame = |e: Error| match e {
            Error::EmptyFrame { .. } => Error::EmptyFrame { frame: Some(t) },
            other => other,
        };
        let objects = seq.objects(t);
        let mask = seq.mask(t);
        let attended = if pipeline.object_attention {
            attend(objects, mask, h.view(), &params.attention)
        } else {
            uniform(objects, mask)
        }
        .map_err(at_frame)?;

        let step = noise.steps[t];
        let image_enhanced = if pipeline.image_diffusion {
            Some(enhance_with_noise(
                seq.image(t),
                step,
                &pipeline.schedule,
                &params.image_denoiser,
                pipeline.lambda,
                noise.image.row(t),
            )?)
        } else {
            None
        };
        let image = image_enhanced
            .as_ref()
            .map_or_else(|| seq.image(t).to_owned(), |e| e.output.clone());

        let mut enhanced_objects = attended.refined.clone();
        let mut object_enhanced = vec![None; mask.len()];
        if pipeline.object_diffusion {
            for k in (0..mask.len()).filter(|&k| mask[k]) {
                let e = enhance_with_noise(
                    attended.refined.row(k),
                    step,
                    &pipeline.schedule,
                    &params.object_denoiser,
                    pipeline.lambda,
                    noise.objects.slice(s![t, k, ..]),
                )?;
                enhanced_objects.row_mut(k).assign(&e.output);
                object_enhanced[k] = Some(e);
            }
        }

        let fused = fuse_inputs(image.view(), enhanced_objects.view(), mask).map_err(at_frame)?;
        let gru = gru_forward(fused.view(), h.view(), &params.gru)?;
        let prob = predict_prob_traced(gru.hidden.view(), &params.prob_head)?;
        let omega = if pipeline.time_weight {
            time_weight(gru.hidden.view(), &params.time_weight)?
        } else {
            1.0
        };
        history.push(gru.hidden.clone());
        let summary = history.summary()?;
        let policy = softmax(policy_logits(summary.view(), &params.actor_critic)?.view());
        let v = value(summary.view(), &params.actor_critic)?;

        let h_prev = std::mem::replace(&mut h, gru.hidden.clone());
        frames.push(FrameCache {
            h_prev,
            attended,
            image_enhanced,
            object_enhanced,
            fused,
            gru,
            prob,
            omega,
            summary,
            policy,
            value: v,
        });
    }
    Ok(EpisodeForward { frames })
}

/// One rolled-out episode: its loss inputs plus everything needed to
/// differentiate it.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub trace: EpisodeTrace,
    pub forward: EpisodeForward,
    pub noise: EpisodeNoise,
}

fn build_trace(
    forward: &EpisodeForward,
    label: ScenarioLabel,
    fps: f64,
    actions: Vec<usize>,
    reward_cfg: &RewardConfig,
) -> EpisodeTrace {
    let n = forward.frames.len();
    let log_probs = actions
        .iter()
        .zip(&forward.frames)
        .map(|(&a, f)| f.policy[a].ln())
        .collect();
    let rewards = actions
        .iter()
        .enumerate()
        .map(|(t, &a)| reward(a, target_action(&label, t, reward_cfg), t, reward_cfg))
        .collect();
    EpisodeTrace {
        label,
        fps,
        probs: forward.probs(),
        time_weights: forward.frames.iter().map(|f| f.omega).collect(),
        policies: forward.frames.iter().map(|f| f.policy.clone()).collect(),
        actions,
        log_probs,
        entropies: forward.frames.iter().map(|f| entropy(f.policy.view())).collect(),
        values: forward.frames.iter().map(|f| f.value).collect(),
        rewards,
        normalized_rewards: vec![0.0; n],
    }
}

/// Samples diffusion noise, runs the forward pass and draws one action per
/// frame. Rewards are left unnormalised; see [`normalize_batch`].
pub fn rollout<R: Rng + ?Sized>(
    seq: &FeatureSequence,
    label: ScenarioLabel,
    params: &ModelParams,
    pipeline: &Pipeline,
    reward_cfg: &RewardConfig,
    rng: &mut R,
) -> Result<Rollout> {
    let noise = EpisodeNoise::sample(rng, seq, pipeline, NoiseMode::Train);
    rollout_with_noise(seq, label, params, pipeline, reward_cfg, noise, rng)
}

pub(crate) fn rollout_with_noise<R: Rng + ?Sized>(
    seq: &FeatureSequence,
    label: ScenarioLabel,
    params: &ModelParams,
    pipeline: &Pipeline,
    reward_cfg: &RewardConfig,
    noise: EpisodeNoise,
    rng: &mut R,
) -> Result<Rollout> {
    let forward = forward_episode(params, seq, pipeline, &noise)?;
    let actions = forward
        .frames
        .iter()
        .map(|f| sample_action(f.policy.view(), rng).map(|(a, _)| a))
        .collect::<Result<Vec<_>>>()?;
    let trace = build_trace(&forward, label, seq.fps, actions, reward_cfg);
    Ok(Rollout { trace, forward, noise })
}

/// Re-runs an episode with fixed noise and fixed actions.
pub fn replay(
    seq: &FeatureSequence,
    label: ScenarioLabel,
    params: &ModelParams,
    pipeline: &Pipeline,
    reward_cfg: &RewardConfig,
    noise: EpisodeNoise,
    actions: Vec<usize>,
) -> Result<Rollout> {
    let forward = forward_episode(params, seq, pipeline, &noise)?;
    let trace = build_trace(&forward, label, seq.fps, actions, reward_cfg);
    Ok(Rollout { trace, forward, noise })
}

/// Normalises rewards jointly over every frame of every trace.
pub fn normalize_batch(traces: &mut [EpisodeTrace], eps: f64) -> Result<()> {
    let all: Vec<f64> = traces.iter().flat_map(|t| t.rewards.iter().copied()).collect();
    let normalized = crate::decision::normalize_rewards(&all, eps)?;
    let mut offset = 0;
    for t in traces.iter_mut() {
        let n = t.rewards.len();
        t.normalized_rewards = normalized[offset..offset + n].to_vec();
        offset += n;
    }
    Ok(())
}

/// Deterministic frame-wise probabilities using the fixed evaluation step
/// and a noise stream seeded by `seed`.
pub fn predict(params: &ModelParams, seq: &FeatureSequence, pipeline: &Pipeline, seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, 0);
    let noise = EpisodeNoise::sample(&mut rng, seq, pipeline, NoiseMode::Eval);
    forward_episode(params, seq, pipeline, &noise).map(|f| f.probs())
}

/// Predicts every video; video `i` uses the noise seed `(eval_seed, i)`.
pub fn evaluate(
    params: &ModelParams,
    dataset: &Dataset,
    pipeline: &Pipeline,
    eval_seed: u64,
) -> Result<Vec<PredictionRecord>> {
    use rayon::prelude::*;
    dataset
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let probs = predict(params, &s.sequence, pipeline, mix_seed(&[eval_seed, i as u64]))?;
            Ok(PredictionRecord {
                probs,
                label: s.label,
                fps: s.sequence.fps,
            })
        })
        .collect()
}
