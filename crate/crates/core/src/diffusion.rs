//! Variance-preserving forward noising, a two-layer feed-forward denoiser and
//! residual fusion of its output back onto the input feature.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::{add_outer, init_matrix, init_vector};

/// Residual fusion coefficient.
pub const DEFAULT_LAMBDA: f64 = 0.15;
pub const DEFAULT_BETA_START: f64 = 0.001;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_STEPS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

/// Linear schedule `beta_t = beta_start + (t / steps)(beta_end - beta_start)`
/// for `t = 0..steps`, with `alpha_bar_t` the running product of `1 - beta`.
pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::Config("diffusion steps must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "schedule endpoints must satisfy 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas = (0..steps)
        .map(|t| beta_start + (t as f64 / steps as f64) * (beta_end - beta_start))
        .collect();
    let mut schedule = DiffusionSchedule::from_betas(betas)?;
    schedule.beta_start = beta_start;
    schedule.beta_end = beta_end;
    Ok(schedule)
}

impl DiffusionSchedule {
    /// Builds a schedule from explicit betas. Accepts the closed interval
    /// `[0, 1]` so degenerate no-noise / pure-noise schedules can be formed.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one beta".into()));
        }
        if betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config("betas must lie in [0, 1]".into()));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("betas must be non-decreasing".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            steps: betas.len(),
            beta_start: betas[0],
            beta_end: *betas.last().unwrap(),
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or_else(|| Error::Domain(format!("diffusion step {t} out of range for {} steps", self.steps)))
    }
}

/// Uniform draw from `{0, .., steps-1}`.
pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R, steps: usize) -> usize {
    rng.random_range(0..steps.max(1))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || StandardNormal.sample(rng))
}

/// `sqrt(alpha_bar_t) f + sqrt(1 - alpha_bar_t) eps`
pub fn forward_diffuse(
    feature: ArrayView1<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
    noise: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    check_len("forward diffusion noise", feature.len(), noise.len())?;
    let alpha_bar = schedule.alpha_bar(t)?;
    Ok(mix(feature, alpha_bar, noise))
}

fn mix(feature: ArrayView1<f64>, alpha_bar: f64, noise: ArrayView1<f64>) -> Array1<f64> {
    let mut out = feature.to_owned() * alpha_bar.sqrt();
    out.scaled_add((1.0 - alpha_bar).sqrt(), &noise);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Optional `steps x d` table added to the hidden pre-activation.
    pub step_embedding: Option<Array2<f64>>,
}

impl DenoiserParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, steps: usize, step_embedding: bool) -> Self {
        Self {
            w1: init_matrix(rng, dim, dim),
            b1: init_vector(rng, dim, dim),
            w2: init_matrix(rng, dim, dim),
            b2: init_vector(rng, dim, dim),
            step_embedding: step_embedding.then(|| Array2::zeros((steps, dim))),
        }
    }

    pub fn zeros(dim: usize, steps: usize, step_embedding: bool) -> Self {
        Self {
            w1: Array2::zeros((dim, dim)),
            b1: Array1::zeros(dim),
            w2: Array2::zeros((dim, dim)),
            b2: Array1::zeros(dim),
            step_embedding: step_embedding.then(|| Array2::zeros((steps, dim))),
        }
    }

    pub fn dim(&self) -> usize {
        self.b1.len()
    }
}

/// Cached intermediate values of one denoiser evaluation.
#[derive(Clone, Debug)]
pub struct DenoiseTrace {
    pub input: Array1<f64>,
    pub hidden: Array1<f64>,
    pub output: Array1<f64>,
    pub step: usize,
}

/// `W2 relu(W1 x + b1 [+ emb_t]) + b2`
pub fn denoise(noisy: ArrayView1<f64>, t: usize, params: &DenoiserParams) -> Result<Array1<f64>> {
    denoise_traced(noisy, t, params).map(|tr| tr.output)
}

pub fn denoise_traced(noisy: ArrayView1<f64>, t: usize, params: &DenoiserParams) -> Result<DenoiseTrace> {
    check_len("denoiser input", params.dim(), noisy.len())?;
    let mut pre = params.w1.dot(&noisy) + &params.b1;
    if let Some(table) = &params.step_embedding {
        if t >= table.nrows() {
            return Err(Error::Domain(format!(
                "step {t} beyond embedding table of {} rows",
                table.nrows()
            )));
        }
        pre += &table.row(t);
    }
    let hidden = pre.mapv(|v| v.max(0.0));
    let output = params.w2.dot(&hidden) + &params.b2;
    Ok(DenoiseTrace {
        input: noisy.to_owned(),
        hidden,
        output,
        step: t,
    })
}

/// Accumulates parameter gradients and returns the gradient w.r.t. the
/// denoiser input.
pub fn denoise_backward(
    trace: &DenoiseTrace,
    d_output: ArrayView1<f64>,
    params: &DenoiserParams,
    grads: &mut DenoiserParams,
) -> Array1<f64> {
    add_outer(&mut grads.w2, d_output, trace.hidden.view());
    grads.b2 += &d_output;
    let mut d_pre = params.w2.t().dot(&d_output);
    d_pre.zip_mut_with(&trace.hidden, |d, &h| {
        if h <= 0.0 {
            *d = 0.0;
        }
    });
    add_outer(&mut grads.w1, d_pre.view(), trace.input.view());
    grads.b1 += &d_pre;
    if let Some(table) = grads.step_embedding.as_mut() {
        let mut row = table.row_mut(trace.step);
        row += &d_pre;
    }
    params.w1.t().dot(&d_pre)
}

/// Residual enhancement with explicit noise:
/// `f + lambda * denoise(forward_diffuse(f, t, eps), t)`.
#[derive(Clone, Debug)]
pub struct Enhanced {
    pub output: Array1<f64>,
    pub denoise: DenoiseTrace,
    pub alpha_bar: f64,
}

pub fn enhance_with_noise(
    feature: ArrayView1<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
    params: &DenoiserParams,
    lambda: f64,
    noise: ArrayView1<f64>,
) -> Result<Enhanced> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!(
            "fusion coefficient must be non-negative, got {lambda}"
        )));
    }
    let noisy = forward_diffuse(feature, t, schedule, noise)?;
    let denoise = denoise_traced(noisy.view(), t, params)?;
    let mut output = feature.to_owned();
    output.scaled_add(lambda, &denoise.output);
    Ok(Enhanced {
        output,
        denoise,
        alpha_bar: schedule.alpha_bar(t)?,
    })
}

/// Residual enhancement drawing the forward-process noise from `rng`.
pub fn enhance<R: Rng + ?Sized>(
    feature: ArrayView1<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
    params: &DenoiserParams,
    lambda: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let noise = standard_normal(rng, feature.len());
    enhance_with_noise(feature, t, schedule, params, lambda, noise.view()).map(|e| e.output)
}

/// Backward through [`enhance_with_noise`]. `d_denoised` is an optional extra
/// gradient on the raw denoiser output. Returns the gradient w.r.t. the input
/// feature (identity path plus the path through the noised copy).
pub fn enhance_backward(
    enhanced: &Enhanced,
    d_output: ArrayView1<f64>,
    d_denoised: Option<ArrayView1<f64>>,
    lambda: f64,
    params: &DenoiserParams,
    grads: &mut DenoiserParams,
) -> Array1<f64> {
    let mut d_den = d_output.to_owned() * lambda;
    if let Some(extra) = d_denoised {
        d_den += &extra;
    }
    let d_noisy = denoise_backward(&enhanced.denoise, d_den.view(), params, grads);
    let mut d_feature = d_output.to_owned();
    d_feature.scaled_add(enhanced.alpha_bar.sqrt(), &d_noisy);
    d_feature
}
