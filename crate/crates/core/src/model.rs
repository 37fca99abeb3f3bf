//! Model dimensions, configuration and the full learnable parameter set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionParams;
use crate::decision::ActorCriticParams;
use crate::diffusion::{self, build_schedule, DenoiserParams, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::temporal::{GruParams, ProbHeadParams, TimeWeightParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Residual fusion coefficient.
    pub lambda: f64,
    pub step_embedding: bool,
    /// Weight of the optional denoiser reconstruction loss (0 = off).
    pub aux_weight: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: diffusion::DEFAULT_STEPS,
            beta_start: diffusion::DEFAULT_BETA_START,
            beta_end: diffusion::DEFAULT_BETA_END,
            lambda: diffusion::DEFAULT_LAMBDA,
            step_embedding: false,
            aux_weight: 0.0,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        build_schedule(self.steps, self.beta_start, self.beta_end)
    }

    /// Fixed step used at evaluation time.
    pub fn eval_step(&self) -> usize {
        self.steps / 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_att: usize,
    pub d_hidden: usize,
    pub d_mlp: usize,
    pub n_actions: usize,
    pub diffusion: DiffusionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_att: 32,
            d_hidden: 64,
            d_mlp: 32,
            n_actions: 2,
            diffusion: DiffusionConfig::default(),
        }
    }
}

impl ModelConfig {
    /// 256-unit recurrent state.
    pub fn full_scale() -> Self {
        Self {
            d_att: 256,
            d_hidden: 256,
            d_mlp: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_att == 0 || self.d_hidden == 0 || self.d_mlp == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.n_actions < 2 {
            return Err(Error::Config(format!(
                "need at least 2 actions, got {}",
                self.n_actions
            )));
        }
        if !(self.diffusion.lambda >= 0.0) || !(self.diffusion.aux_weight >= 0.0) {
            return Err(Error::Config(
                "diffusion lambda and aux_weight must be non-negative".into(),
            ));
        }
        self.diffusion.schedule().map(|_| ())
    }
}

/// Every width needed to shape the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_img: usize,
    pub d_obj: usize,
    pub max_objects: usize,
    pub d_att: usize,
    pub d_hidden: usize,
    pub d_mlp: usize,
    pub n_actions: usize,
    pub steps: usize,
    pub step_embedding: bool,
}

impl Dims {
    pub fn new(d_img: usize, d_obj: usize, max_objects: usize, cfg: &ModelConfig) -> Self {
        Self {
            d_img,
            d_obj,
            max_objects,
            d_att: cfg.d_att,
            d_hidden: cfg.d_hidden,
            d_mlp: cfg.d_mlp,
            n_actions: cfg.n_actions,
            steps: cfg.diffusion.steps,
            step_embedding: cfg.diffusion.step_embedding,
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_img + self.d_obj
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    pub attention: AttentionParams,
    pub image_denoiser: DenoiserParams,
    pub object_denoiser: DenoiserParams,
    pub gru: GruParams,
    pub prob_head: ProbHeadParams,
    pub time_weight: TimeWeightParams,
    pub actor_critic: ActorCriticParams,
}

macro_rules! tensor_list {
    ($self:ident, $conv:ident, $opt:ident) => {{
        let mut out = vec![
            ("attention.w_hidden", $self.attention.w_hidden.$conv()),
            ("attention.w_object", $self.attention.w_object.$conv()),
            ("attention.bias", $self.attention.bias.$conv()),
            ("attention.w_score", $self.attention.w_score.$conv()),
            ("image_denoiser.w1", $self.image_denoiser.w1.$conv()),
            ("image_denoiser.b1", $self.image_denoiser.b1.$conv()),
            ("image_denoiser.w2", $self.image_denoiser.w2.$conv()),
            ("image_denoiser.b2", $self.image_denoiser.b2.$conv()),
            ("object_denoiser.w1", $self.object_denoiser.w1.$conv()),
            ("object_denoiser.b1", $self.object_denoiser.b1.$conv()),
            ("object_denoiser.w2", $self.object_denoiser.w2.$conv()),
            ("object_denoiser.b2", $self.object_denoiser.b2.$conv()),
            ("gru.w_z", $self.gru.w_z.$conv()),
            ("gru.u_z", $self.gru.u_z.$conv()),
            ("gru.b_z", $self.gru.b_z.$conv()),
            ("gru.w_r", $self.gru.w_r.$conv()),
            ("gru.u_r", $self.gru.u_r.$conv()),
            ("gru.b_r", $self.gru.b_r.$conv()),
            ("gru.w_h", $self.gru.w_h.$conv()),
            ("gru.u_h", $self.gru.u_h.$conv()),
            ("gru.b_h", $self.gru.b_h.$conv()),
            ("prob_head.w1", $self.prob_head.w1.$conv()),
            ("prob_head.b1", $self.prob_head.b1.$conv()),
            ("prob_head.w2", $self.prob_head.w2.$conv()),
            ("prob_head.b2", $self.prob_head.b2.$conv()),
            ("time_weight.w", $self.time_weight.w.$conv()),
            ("time_weight.b", $self.time_weight.b.$conv()),
            ("actor_critic.w_policy", $self.actor_critic.w_policy.$conv()),
            ("actor_critic.b_policy", $self.actor_critic.b_policy.$conv()),
            ("actor_critic.w_value", $self.actor_critic.w_value.$conv()),
            ("actor_critic.b_value", $self.actor_critic.b_value.$conv()),
        ];
        if let Some(t) = $self.image_denoiser.step_embedding.$opt() {
            out.push(("image_denoiser.step_embedding", t.$conv()));
        }
        if let Some(t) = $self.object_denoiser.step_embedding.$opt() {
            out.push(("object_denoiser.step_embedding", t.$conv()));
        }
        out.into_iter()
            .map(|(name, s)| (name, s.expect("parameters are kept in standard layout")))
            .collect()
    }};
}

impl ModelParams {
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            dims,
            attention: AttentionParams::init(&mut rng, dims.d_att, dims.d_hidden, dims.d_obj),
            image_denoiser: DenoiserParams::init(&mut rng, dims.d_img, dims.steps, dims.step_embedding),
            object_denoiser: DenoiserParams::init(&mut rng, dims.d_obj, dims.steps, dims.step_embedding),
            gru: GruParams::init(&mut rng, dims.d_in(), dims.d_hidden),
            prob_head: ProbHeadParams::init(&mut rng, dims.d_hidden, dims.d_mlp),
            time_weight: TimeWeightParams::init(&mut rng, dims.d_hidden),
            actor_critic: ActorCriticParams::init(&mut rng, dims.n_actions, dims.d_hidden),
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            attention: AttentionParams::zeros(dims.d_att, dims.d_hidden, dims.d_obj),
            image_denoiser: DenoiserParams::zeros(dims.d_img, dims.steps, dims.step_embedding),
            object_denoiser: DenoiserParams::zeros(dims.d_obj, dims.steps, dims.step_embedding),
            gru: GruParams::zeros(dims.d_in(), dims.d_hidden),
            prob_head: ProbHeadParams::zeros(dims.d_hidden, dims.d_mlp),
            time_weight: TimeWeightParams::zeros(dims.d_hidden),
            actor_critic: ActorCriticParams::zeros(dims.n_actions, dims.d_hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    /// Named flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        tensor_list!(self, as_slice, as_ref)
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        tensor_list!(self, as_slice_mut, as_mut)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// First tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Dims {
        Dims::new(
            3,
            2,
            2,
            &ModelConfig {
                d_att: 2,
                d_hidden: 4,
                d_mlp: 3,
                ..ModelConfig::default()
            },
        )
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::init(dims(), 5);
        assert_eq!(a, ModelParams::init(dims(), 5));
        assert_ne!(a, ModelParams::init(dims(), 6));
        let bound = 1.0 / (a.dims.d_hidden as f64).sqrt();
        assert!(a.actor_critic.w_policy.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn tensor_views_cover_every_parameter() {
        let p = ModelParams::init(dims(), 1);
        let names: Vec<_> = p.tensors().iter().map(|(n, _)| *n).collect();
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len());
        assert_eq!(p.flatten().len(), p.num_params());

        let mut with_emb = dims();
        with_emb.step_embedding = true;
        let q = ModelParams::init(with_emb, 1);
        assert_eq!(q.num_params(), p.num_params() + with_emb.steps * (3 + 2));
    }

    #[test]
    fn add_scaled_and_non_finite_detection() {
        let mut p = ModelParams::init(dims(), 1);
        let g = p.clone();
        p.add_scaled(-1.0, &g);
        assert!(p.flatten().iter().all(|&v| v == 0.0));
        p.gru.b_r[1] = f64::NAN;
        assert_eq!(p.first_non_finite(), Some("gru.b_r"));
    }
}
