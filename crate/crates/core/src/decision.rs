//! Actor-critic heads over the history summary, the time-decayed reward and
//! batch reward normalisation.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ScenarioLabel;
use crate::error::{check_len, Error, Result};
use crate::math::{add_outer, init_matrix, init_vector, softmax};

/// Action 0 = no warning, 1 = warn.
pub const WARN: usize = 1;
pub const NO_WARN: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorCriticParams {
    /// `A x d_hidden`
    pub w_policy: Array2<f64>,
    pub b_policy: Array1<f64>,
    pub w_value: Array1<f64>,
    /// Length-1 bias.
    pub b_value: Array1<f64>,
}

impl ActorCriticParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, n_actions: usize, d_hidden: usize) -> Self {
        Self {
            w_policy: init_matrix(rng, n_actions, d_hidden),
            b_policy: init_vector(rng, n_actions, d_hidden),
            w_value: init_vector(rng, d_hidden, d_hidden),
            b_value: init_vector(rng, 1, d_hidden),
        }
    }

    pub fn zeros(n_actions: usize, d_hidden: usize) -> Self {
        Self {
            w_policy: Array2::zeros((n_actions, d_hidden)),
            b_policy: Array1::zeros(n_actions),
            w_value: Array1::zeros(d_hidden),
            b_value: Array1::zeros(1),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.b_policy.len()
    }
}

pub fn policy_logits(summary: ArrayView1<f64>, params: &ActorCriticParams) -> Result<Array1<f64>> {
    check_len("policy input", params.w_policy.ncols(), summary.len())?;
    Ok(params.w_policy.dot(&summary) + &params.b_policy)
}

/// `softmax(W_p h + b_p)`
pub fn policy(summary: ArrayView1<f64>, params: &ActorCriticParams) -> Result<Array1<f64>> {
    policy_logits(summary, params).map(|l| softmax(l.view()))
}

/// `w_v . h + b_v`
pub fn value(summary: ArrayView1<f64>, params: &ActorCriticParams) -> Result<f64> {
    check_len("value input", params.w_value.len(), summary.len())?;
    Ok(params.w_value.dot(&summary) + params.b_value[0])
}

/// Draws a categorical action; returns it with its log-probability.
pub fn sample_action<R: Rng + ?Sized>(probs: ArrayView1<f64>, rng: &mut R) -> Result<(usize, f64)> {
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Numeric(format!("invalid action distribution {probs}")));
    }
    let total: f64 = probs.sum();
    if !(total > 0.0) {
        return Err(Error::Numeric("action distribution has zero mass".into()));
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = None;
    for (a, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            chosen = Some(a);
            acc += p;
            if u < acc {
                break;
            }
        }
    }
    let a = chosen.expect("positive mass implies a positive component");
    Ok((a, (probs[a] / total).ln()))
}

/// Accumulates gradients for the policy and value heads and returns the
/// gradient w.r.t. the summary vector.
pub fn heads_backward(
    summary: ArrayView1<f64>,
    d_logits: ArrayView1<f64>,
    d_value: f64,
    params: &ActorCriticParams,
    grads: &mut ActorCriticParams,
) -> Array1<f64> {
    add_outer(&mut grads.w_policy, d_logits, summary);
    grads.b_policy += &d_logits;
    grads.w_value.scaled_add(d_value, &summary);
    grads.b_value[0] += d_value;
    let mut d_summary = params.w_policy.t().dot(&d_logits);
    d_summary.scaled_add(d_value, &params.w_value);
    d_summary
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Decay constant in frames.
    pub decay: f64,
    /// Reward for an incorrect action.
    pub penalty: f64,
    /// Stabiliser in the normalisation denominator.
    pub eps: f64,
    /// When set, positives only expect a warning from `tau - horizon` on;
    /// by default every frame of a positive video expects one.
    pub positive_horizon: Option<usize>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            decay: 5.0,
            penalty: -0.5,
            eps: 1e-9,
            positive_horizon: None,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::Config(format!(
                "reward decay must be positive, got {}",
                self.decay
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("reward eps must be positive, got {}", self.eps)));
        }
        if !self.penalty.is_finite() {
            return Err(Error::Config("reward penalty must be finite".into()));
        }
        Ok(())
    }
}

/// Ground-truth action at 0-based frame `t`.
pub fn target_action(label: &ScenarioLabel, t: usize, cfg: &RewardConfig) -> usize {
    if !label.positive {
        return NO_WARN;
    }
    match cfg.positive_horizon {
        None => WARN,
        Some(h) if t + 1 + h >= label.accident_frame => WARN,
        Some(_) => NO_WARN,
    }
}

/// `exp(-t / decay)` when the action is correct, otherwise the penalty.
pub fn reward(action: usize, target: usize, t: usize, cfg: &RewardConfig) -> f64 {
    if action == target {
        (-(t as f64) / cfg.decay).exp()
    } else {
        cfg.penalty
    }
}

/// `(r - mean) / (std + eps)` with the population standard deviation.
pub fn normalize_rewards(rewards: &[f64], eps: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Domain("cannot normalise an empty reward batch".into()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + eps;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}
