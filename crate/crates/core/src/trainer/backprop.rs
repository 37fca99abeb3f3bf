use ndarray::{s, Array1, Array2};
use rayon::prelude::*;

use super::rollout::{EpisodeForward, Rollout};
use super::Pipeline;
use crate::attention::attend_backward;
use crate::dataset::{FeatureSequence, Sample};
use crate::decision::heads_backward;
use crate::diffusion::enhance_backward;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::objective::{batch_losses, trace_gradients, EpisodeTrace, LossBreakdown, LossConfig, TraceGradients};
use crate::temporal::{gru_backward, predict_prob_backward, time_weight_backward, window_span};

/// A minibatch of rolled-out episodes with rewards already normalised.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub samples: Vec<&'a Sample>,
    pub forwards: Vec<EpisodeForward>,
    pub traces: Vec<EpisodeTrace>,
}

impl<'a> Batch<'a> {
    pub fn new(samples: Vec<&'a Sample>, rollouts: Vec<Rollout>) -> Result<Self> {
        if samples.len() != rollouts.len() {
            return Err(Error::Shape {
                context: "batch rollouts",
                expected: samples.len(),
                actual: rollouts.len(),
            });
        }
        let (forwards, traces) = rollouts.into_iter().map(|r| (r.forward, r.trace)).unzip();
        Ok(Self {
            samples,
            forwards,
            traces,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total number of frames across the batch.
    pub fn frames(&self) -> usize {
        self.traces.iter().map(EpisodeTrace::len).sum()
    }
}

fn squared_gap(a: &Array1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean over frames of the per-dimension denoiser reconstruction error.
fn episode_aux_loss(seq: &FeatureSequence, forward: &EpisodeForward) -> f64 {
    let n = forward.frames.len();
    let mut total = 0.0;
    for (t, f) in forward.frames.iter().enumerate() {
        if let Some(e) = &f.image_enhanced {
            total += squared_gap(&e.denoise.output, seq.image(t)) / seq.d_img() as f64;
        }
        let present = f.object_enhanced.iter().flatten().count();
        for (k, e) in f.object_enhanced.iter().enumerate() {
            if let Some(e) = e {
                total +=
                    squared_gap(&e.denoise.output, f.attended.refined.row(k)) / (present as f64 * seq.d_obj() as f64);
            }
        }
    }
    total / n as f64
}

/// Loss terms of a batch, including the weighted reconstruction term.
pub fn batch_loss(batch: &Batch<'_>, pipeline: &Pipeline, cfg: &LossConfig) -> Result<LossBreakdown> {
    let mut out = batch_losses(&batch.traces, cfg)?;
    if pipeline.aux_weight > 0.0 {
        let aux = batch
            .samples
            .iter()
            .zip(&batch.forwards)
            .map(|(s, f)| episode_aux_loss(&s.sequence, f))
            .sum::<f64>()
            / batch.len() as f64;
        out.aux = aux;
        out.total += pipeline.aux_weight * aux;
    }
    Ok(out)
}

/// Exact gradient of one episode's share of the batch loss, backpropagated
/// through time with the sampled actions and diffusion noise held fixed.
/// `aux_scale` multiplies the episode's summed reconstruction error.
pub fn episode_gradients(
    params: &ModelParams,
    seq: &FeatureSequence,
    forward: &EpisodeForward,
    tg: &TraceGradients,
    pipeline: &Pipeline,
    aux_scale: f64,
) -> ModelParams {
    let mut g = params.zeros_like();
    let n = forward.frames.len();
    let d_img = seq.d_img();
    let d_obj = seq.d_obj();

    let mut d_hidden: Vec<Array1<f64>> = vec![Array1::zeros(params.dims.d_hidden); n];
    for (t, f) in forward.frames.iter().enumerate() {
        let h = f.gru.hidden.view();
        let d = predict_prob_backward(&f.prob, h, tg.d_probs[t], &params.prob_head, &mut g.prob_head);
        d_hidden[t] += &d;
        if pipeline.time_weight {
            let d = time_weight_backward(
                f.omega,
                h,
                tg.d_time_weights[t],
                &params.time_weight,
                &mut g.time_weight,
            );
            d_hidden[t] += &d;
        }
        let d_summary = heads_backward(
            f.summary.view(),
            tg.d_policy_logits[t].view(),
            tg.d_values[t],
            &params.actor_critic,
            &mut g.actor_critic,
        );
        let span = window_span(pipeline.window, t);
        for d in &mut d_hidden[t + 1 - span..=t] {
            d.scaled_add(1.0 / span as f64, &d_summary);
        }
    }

    let mut carry = Array1::zeros(params.dims.d_hidden);
    for t in (0..n).rev() {
        let f = &forward.frames[t];
        let d_h = &d_hidden[t] + &carry;
        let (d_x, mut d_h_prev) = gru_backward(
            &f.gru,
            f.fused.view(),
            f.h_prev.view(),
            d_h.view(),
            &params.gru,
            &mut g.gru,
        );

        if let Some(e) = &f.image_enhanced {
            let extra =
                (aux_scale > 0.0).then(|| (&e.denoise.output - &seq.image(t)) * (2.0 * aux_scale / d_img as f64));
            enhance_backward(
                e,
                d_x.slice(s![..d_img]),
                extra.as_ref().map(|a| a.view()),
                pipeline.lambda,
                &params.image_denoiser,
                &mut g.image_denoiser,
            );
        }

        let mask = seq.mask(t);
        let present = mask.iter().filter(|&&m| m).count() as f64;
        let d_mean = d_x.slice(s![d_img..]).to_owned() / present;
        let mut d_refined = Array2::zeros((mask.len(), d_obj));
        for k in (0..mask.len()).filter(|&k| mask[k]) {
            let d_row = match &f.object_enhanced[k] {
                Some(e) => {
                    let extra = (aux_scale > 0.0).then(|| {
                        (&e.denoise.output - &f.attended.refined.row(k)) * (2.0 * aux_scale / (present * d_obj as f64))
                    });
                    let mut d = enhance_backward(
                        e,
                        d_mean.view(),
                        extra.as_ref().map(|a| a.view()),
                        pipeline.lambda,
                        &params.object_denoiser,
                        &mut g.object_denoiser,
                    );
                    if let Some(extra) = &extra {
                        d -= extra;
                    }
                    d
                }
                None => d_mean.clone(),
            };
            d_refined.row_mut(k).assign(&d_row);
        }
        d_h_prev += &attend_backward(
            &f.attended,
            seq.objects(t),
            mask,
            f.h_prev.view(),
            d_refined.view(),
            &params.attention,
            &mut g.attention,
        );
        carry = d_h_prev;
    }
    g
}

/// Gradient of [`batch_loss`] w.r.t. every parameter. Episodes are
/// differentiated in parallel and summed in batch order.
pub fn compute_gradients(
    batch: &Batch<'_>,
    params: &ModelParams,
    pipeline: &Pipeline,
    cfg: &LossConfig,
) -> Result<ModelParams> {
    let b = batch.len();
    let m = batch.frames();
    if b == 0 || m == 0 {
        return Err(Error::Domain("gradient of an empty batch".into()));
    }
    let parts: Vec<ModelParams> = (0..b)
        .into_par_iter()
        .map(|i| {
            let trace = &batch.traces[i];
            let tg = trace_gradients(trace, b, m, cfg);
            let aux_scale = pipeline.aux_weight / (b as f64 * trace.len() as f64);
            episode_gradients(
                params,
                &batch.samples[i].sequence,
                &batch.forwards[i],
                &tg,
                pipeline,
                aux_scale,
            )
        })
        .collect();
    let mut total = params.zeros_like();
    for p in &parts {
        total.add_scaled(1.0, p);
    }
    if let Some(name) = total.first_non_finite() {
        return Err(Error::Numeric(format!("non-finite gradient in {name}")));
    }
    Ok(total)
}
