//! Training objective: time-weighted anticipation loss, entropy-regularised
//! actor loss, critic loss and their weighted sum.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::dataset::ScenarioLabel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Scale `c` of the negative-video cross-entropy.
    pub negative_scale: f64,
    pub entropy_weight: f64,
    /// Weight of the actor-critic block in the total.
    pub alpha: f64,
    /// Weight of the critic inside the actor-critic block.
    pub beta: f64,
    /// Probabilities are clamped to `[floor, 1 - floor]` before logs.
    pub prob_floor: f64,
    /// On/off multipliers used by the ablation switches.
    pub anticipation_scale: f64,
    pub actor_scale: f64,
    pub critic_scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            negative_scale: 1.0,
            entropy_weight: 0.1,
            alpha: 0.5,
            beta: 0.5,
            prob_floor: 1e-7,
            anticipation_scale: 1.0,
            actor_scale: 1.0,
            critic_scale: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("negative_scale", self.negative_scale),
            ("entropy_weight", self.entropy_weight),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("anticipation_scale", self.anticipation_scale),
            ("actor_scale", self.actor_scale),
            ("critic_scale", self.critic_scale),
        ];
        if let Some((name, v)) = named.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!(
                "{name} must be finite and non-negative, got {v}"
            )));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 0.5) {
            return Err(Error::Config(format!(
                "prob_floor must lie in (0, 0.5), got {}",
                self.prob_floor
            )));
        }
        Ok(())
    }

    /// Coefficients of (anticipation, actor, critic) in the total loss.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        (
            self.anticipation_scale,
            self.alpha * self.actor_scale,
            self.alpha * self.beta * self.critic_scale,
        )
    }
}

/// Everything the losses need about one rolled-out episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub label: ScenarioLabel,
    pub fps: f64,
    pub probs: Vec<f64>,
    pub time_weights: Vec<f64>,
    /// Action distribution per frame.
    pub policies: Vec<Array1<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub normalized_rewards: Vec<f64>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn advantage(&self, t: usize) -> f64 {
        self.normalized_rewards[t] - self.values[t]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub anticipation: f64,
    pub actor: f64,
    pub critic: f64,
    /// Optional denoiser reconstruction term (already weighted into `total`).
    #[serde(default)]
    pub aux: f64,
    pub total: f64,
}

/// `-max(0, (tau - t - 1) / fps)` for 0-based frame `t` and 1-based `tau`.
pub fn temporal_penalty(t: usize, accident_frame: usize, fps: f64) -> Result<f64> {
    if accident_frame == 0 {
        return Err(Error::Domain(
            "temporal penalty is only defined for positive videos".into(),
        ));
    }
    let lead = (accident_frame as f64 - t as f64 - 1.0) / fps;
    Ok(-lead.max(0.0))
}

fn clamp_prob(p: f64, floor: f64) -> (f64, bool) {
    let c = p.clamp(floor, 1.0 - floor);
    (c, c == p)
}

/// Loss of one frame and its partial derivatives w.r.t. `p` and `omega`.
fn frame_loss(p: f64, omega: f64, t: usize, label: &ScenarioLabel, fps: f64, cfg: &LossConfig) -> (f64, f64, f64) {
    let (pc, inside) = clamp_prob(p, cfg.prob_floor);
    if label.positive {
        let decay = temporal_penalty(t, label.accident_frame, fps)
            .expect("positive label")
            .exp();
        let ce = -pc.ln();
        let d_p = if inside { -omega * decay / pc } else { 0.0 };
        (omega * decay * ce, d_p, decay * ce)
    } else {
        let c = cfg.negative_scale;
        let d_p = if inside { c / (1.0 - pc) } else { 0.0 };
        (-c * (1.0 - pc).ln(), d_p, 0.0)
    }
}

/// Mean over frames of the per-frame anticipation loss.
pub fn episode_anticipation_loss(trace: &EpisodeTrace, cfg: &LossConfig) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::Domain("empty trace".into()));
    }
    let total: f64 = (0..trace.len())
        .map(|t| frame_loss(trace.probs[t], trace.time_weights[t], t, &trace.label, trace.fps, cfg).0)
        .sum();
    Ok(total / trace.len() as f64)
}

/// Mean over episodes of [`episode_anticipation_loss`].
pub fn anticipation_loss(traces: &[EpisodeTrace], cfg: &LossConfig) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let sum = traces
        .iter()
        .map(|tr| episode_anticipation_loss(tr, cfg))
        .sum::<Result<f64>>()?;
    Ok(sum / traces.len() as f64)
}

fn frame_count(traces: &[EpisodeTrace]) -> usize {
    traces.iter().map(EpisodeTrace::len).sum()
}

/// `-mean[log pi(a) A] - lambda_e mean[H(pi)]` over every frame of the batch,
/// with the advantage held constant.
pub fn actor_loss(traces: &[EpisodeTrace], entropy_weight: f64) -> f64 {
    let m = frame_count(traces).max(1) as f64;
    let mut pg = 0.0;
    let mut ent = 0.0;
    for tr in traces {
        for t in 0..tr.len() {
            pg += tr.log_probs[t] * tr.advantage(t);
            ent += tr.entropies[t];
        }
    }
    -pg / m - entropy_weight * ent / m
}

/// Mean over every frame of `0.5 (r~ - V)^2`.
pub fn critic_loss(traces: &[EpisodeTrace]) -> f64 {
    let m = frame_count(traces).max(1) as f64;
    traces
        .iter()
        .flat_map(|tr| (0..tr.len()).map(move |t| 0.5 * tr.advantage(t).powi(2)))
        .sum::<f64>()
        / m
}

/// `L_an + alpha (L_actor + beta L_critic)`, with ablation multipliers.
pub fn total_loss(l_an: f64, l_actor: f64, l_critic: f64, cfg: &LossConfig) -> f64 {
    let (c_an, c_actor, c_critic) = cfg.coefficients();
    c_an * l_an + c_actor * l_actor + c_critic * l_critic
}

pub fn batch_losses(traces: &[EpisodeTrace], cfg: &LossConfig) -> Result<LossBreakdown> {
    let anticipation = anticipation_loss(traces, cfg)?;
    let actor = actor_loss(traces, cfg.entropy_weight);
    let critic = critic_loss(traces);
    Ok(LossBreakdown {
        anticipation,
        actor,
        critic,
        aux: 0.0,
        total: total_loss(anticipation, actor, critic, cfg),
    })
}

/// Gradient of the batch total loss w.r.t. one episode's per-frame outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceGradients {
    pub d_probs: Vec<f64>,
    pub d_time_weights: Vec<f64>,
    pub d_policy_logits: Vec<Array1<f64>>,
    pub d_values: Vec<f64>,
}

pub fn trace_gradients(
    trace: &EpisodeTrace,
    batch_episodes: usize,
    batch_frames: usize,
    cfg: &LossConfig,
) -> TraceGradients {
    let (c_an, c_actor, c_critic) = cfg.coefficients();
    let n = trace.len();
    let an_scale = c_an / (batch_episodes as f64 * n as f64);
    let m = batch_frames as f64;

    let mut d_probs = Vec::with_capacity(n);
    let mut d_time_weights = Vec::with_capacity(n);
    let mut d_policy_logits = Vec::with_capacity(n);
    let mut d_values = Vec::with_capacity(n);
    for t in 0..n {
        let (_, d_p, d_w) = frame_loss(trace.probs[t], trace.time_weights[t], t, &trace.label, trace.fps, cfg);
        d_probs.push(an_scale * d_p);
        d_time_weights.push(an_scale * d_w);

        let pi = &trace.policies[t];
        let adv = trace.advantage(t);
        let h = trace.entropies[t];
        let d_logits = Array1::from_shape_fn(pi.len(), |j| {
            let onehot = if j == trace.actions[t] { 1.0 } else { 0.0 };
            let log_pj = if pi[j] > 0.0 { pi[j].ln() } else { 0.0 };
            -adv * (onehot - pi[j]) + cfg.entropy_weight * pi[j] * (log_pj + h)
        }) * (c_actor / m);
        d_policy_logits.push(d_logits);
        d_values.push(c_critic * (trace.values[t] - trace.normalized_rewards[t]) / m);
    }
    TraceGradients {
        d_probs,
        d_time_weights,
        d_policy_logits,
        d_values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn trace(label: ScenarioLabel, probs: Vec<f64>, omega: f64) -> EpisodeTrace {
        let n = probs.len();
        EpisodeTrace {
            label,
            fps: 20.0,
            time_weights: vec![omega; n],
            probs,
            policies: vec![array![0.5, 0.5]; n],
            actions: vec![0; n],
            log_probs: vec![0.5f64.ln(); n],
            entropies: vec![2f64.ln(); n],
            values: vec![0.0; n],
            rewards: vec![0.0; n],
            normalized_rewards: vec![0.0; n],
        }
    }

    #[test]
    fn penalty_cases() {
        assert_eq!(temporal_penalty(79, 80, 20.0).unwrap(), 0.0);
        assert_eq!(temporal_penalty(59, 80, 20.0).unwrap(), -1.0);
        assert_eq!(temporal_penalty(95, 80, 20.0).unwrap(), 0.0);
        assert!(temporal_penalty(3, 0, 20.0).is_err());
    }

    #[test]
    fn anticipation_closed_forms() {
        let cfg = LossConfig::default();
        let neg = trace(ScenarioLabel::negative(), vec![0.5; 6], 1.0);
        assert!((episode_anticipation_loss(&neg, &cfg).unwrap() - 2f64.ln()).abs() < 1e-12);

        let pos = trace(ScenarioLabel::positive(1), vec![0.5], 1.5);
        assert!((episode_anticipation_loss(&pos, &cfg).unwrap() - 1.5 * 2f64.ln()).abs() < 1e-12);

        let near_perfect = trace(ScenarioLabel::positive(5), vec![1.0 - 1e-12; 5], 1.5);
        assert!(episode_anticipation_loss(&near_perfect, &cfg).unwrap() < 1e-6);
        let exact = trace(ScenarioLabel::positive(5), vec![1.0; 5], 1.5);
        assert!(episode_anticipation_loss(&exact, &cfg).unwrap().is_finite());
    }

    #[test]
    fn actor_closed_forms() {
        let t = trace(ScenarioLabel::negative(), vec![0.5; 4], 1.0);
        assert!((actor_loss(std::slice::from_ref(&t), 0.1) + 0.1 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(actor_loss(std::slice::from_ref(&t), 0.0), 0.0);

        let mut single = trace(ScenarioLabel::negative(), vec![0.5], 1.0);
        single.log_probs = vec![-0.5];
        single.normalized_rewards = vec![2.0];
        single.entropies = vec![0.0];
        assert!((actor_loss(&[single], 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn critic_closed_forms() {
        let mut t = trace(ScenarioLabel::negative(), vec![0.5; 2], 1.0);
        t.normalized_rewards = vec![0.3, -0.2];
        t.values = vec![0.3, -0.2];
        assert_eq!(critic_loss(std::slice::from_ref(&t)), 0.0);
        t.values = vec![0.0, 0.0];
        t.normalized_rewards = vec![1.0, 0.0];
        t.values = vec![0.0, 1.0];
        assert!((critic_loss(std::slice::from_ref(&t)) - 0.5).abs() < 1e-15);
        let mut one = trace(ScenarioLabel::negative(), vec![0.5], 1.0);
        one.normalized_rewards = vec![1.0];
        assert_eq!(critic_loss(&[one]), 0.5);
    }

    #[test]
    fn total_composition() {
        let cfg = LossConfig::default();
        assert!((total_loss(1.0, 0.2, 0.4, &cfg) - 1.2).abs() < 1e-15);
        let sup = LossConfig {
            alpha: 0.0,
            ..cfg.clone()
        };
        assert_eq!(total_loss(1.0, 0.2, 0.4, &sup), 1.0);
        let no_value = LossConfig { beta: 0.0, ..cfg };
        assert!((total_loss(1.0, 0.2, 0.4, &no_value) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(LossConfig {
            alpha: -1.0,
            ..LossConfig::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            prob_floor: 0.0,
            ..LossConfig::default()
        }
        .validate()
        .is_err());
    }
}
