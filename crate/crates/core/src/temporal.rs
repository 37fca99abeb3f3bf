//! Per-frame fusion, the gated recurrent unit, the probability and
//! time-weight heads, and the rolling state history.

use std::collections::VecDeque;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::{add_outer, init_matrix, init_vector, sigmoid};

/// `concat(image, mean of present object rows)`.
pub fn fuse_inputs(image: ArrayView1<f64>, objects: ArrayView2<f64>, mask: ArrayView1<bool>) -> Result<Array1<f64>> {
    check_len("fusion mask", objects.nrows(), mask.len())?;
    let present: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
    if present.is_empty() {
        return Err(Error::EmptyFrame { frame: None });
    }
    let mut mean = Array1::zeros(objects.ncols());
    for &k in &present {
        mean += &objects.row(k);
    }
    mean /= present.len() as f64;
    Ok(concatenate(Axis(0), &[image, mean.view()]).expect("1-d concatenation"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_h: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_h: Array1<f64>,
}

impl GruParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_in: usize, d_hidden: usize) -> Self {
        Self {
            w_z: init_matrix(rng, d_hidden, d_in),
            u_z: init_matrix(rng, d_hidden, d_hidden),
            b_z: init_vector(rng, d_hidden, d_hidden),
            w_r: init_matrix(rng, d_hidden, d_in),
            u_r: init_matrix(rng, d_hidden, d_hidden),
            b_r: init_vector(rng, d_hidden, d_hidden),
            w_h: init_matrix(rng, d_hidden, d_in),
            u_h: init_matrix(rng, d_hidden, d_hidden),
            b_h: init_vector(rng, d_hidden, d_hidden),
        }
    }

    pub fn zeros(d_in: usize, d_hidden: usize) -> Self {
        let m = |c| Array2::zeros((d_hidden, c));
        Self {
            w_z: m(d_in),
            u_z: m(d_hidden),
            b_z: Array1::zeros(d_hidden),
            w_r: m(d_in),
            u_r: m(d_hidden),
            b_r: Array1::zeros(d_hidden),
            w_h: m(d_in),
            u_h: m(d_hidden),
            b_h: Array1::zeros(d_hidden),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_z.ncols()
    }

    pub fn d_hidden(&self) -> usize {
        self.b_z.len()
    }
}

/// Gate activations of one recurrent step.
#[derive(Clone, Debug)]
pub struct GruStep {
    pub update: Array1<f64>,
    pub reset: Array1<f64>,
    pub candidate: Array1<f64>,
    pub hidden: Array1<f64>,
}

/// z = s(W_z x + U_z h + b_z); r = s(W_r x + U_r h + b_r);
/// c = tanh(W_h x + U_h (r * h) + b_h); h' = (1 - z) * h + z * c
pub fn gru_forward(x: ArrayView1<f64>, h_prev: ArrayView1<f64>, params: &GruParams) -> Result<GruStep> {
    check_len("gru input", params.d_in(), x.len())?;
    check_len("gru hidden", params.d_hidden(), h_prev.len())?;
    let update = (params.w_z.dot(&x) + params.u_z.dot(&h_prev) + &params.b_z).mapv(sigmoid);
    let reset = (params.w_r.dot(&x) + params.u_r.dot(&h_prev) + &params.b_r).mapv(sigmoid);
    let gated = &reset * &h_prev;
    let candidate = (params.w_h.dot(&x) + params.u_h.dot(&gated) + &params.b_h).mapv(f64::tanh);
    let hidden = (1.0 - &update) * h_prev + &update * &candidate;
    Ok(GruStep {
        update,
        reset,
        candidate,
        hidden,
    })
}

pub fn gru_step(x: ArrayView1<f64>, h_prev: ArrayView1<f64>, params: &GruParams) -> Result<Array1<f64>> {
    gru_forward(x, h_prev, params).map(|s| s.hidden)
}

/// Returns `(d_x, d_h_prev)` and accumulates parameter gradients.
pub fn gru_backward(
    step: &GruStep,
    x: ArrayView1<f64>,
    h_prev: ArrayView1<f64>,
    d_hidden: ArrayView1<f64>,
    params: &GruParams,
    grads: &mut GruParams,
) -> (Array1<f64>, Array1<f64>) {
    let z = &step.update;
    let r = &step.reset;
    let c = &step.candidate;

    let mut d_h_prev = &d_hidden * &(1.0 - z);
    let d_z = &d_hidden * &(c - &h_prev);
    let d_c = &d_hidden * z;

    let d_c_pre = d_c * c.mapv(|v| 1.0 - v * v);
    let gated = r * &h_prev;
    add_outer(&mut grads.w_h, d_c_pre.view(), x);
    add_outer(&mut grads.u_h, d_c_pre.view(), gated.view());
    grads.b_h += &d_c_pre;
    let d_gated = params.u_h.t().dot(&d_c_pre);
    let mut d_x = params.w_h.t().dot(&d_c_pre);
    d_h_prev += &(&d_gated * r);
    let d_r = d_gated * h_prev;

    let d_z_pre = d_z * z.mapv(|v| v * (1.0 - v));
    let d_r_pre = d_r * r.mapv(|v| v * (1.0 - v));
    add_outer(&mut grads.w_z, d_z_pre.view(), x);
    add_outer(&mut grads.u_z, d_z_pre.view(), h_prev);
    grads.b_z += &d_z_pre;
    add_outer(&mut grads.w_r, d_r_pre.view(), x);
    add_outer(&mut grads.u_r, d_r_pre.view(), h_prev);
    grads.b_r += &d_r_pre;

    d_x += &params.w_z.t().dot(&d_z_pre);
    d_x += &params.w_r.t().dot(&d_r_pre);
    d_h_prev += &params.u_z.t().dot(&d_z_pre);
    d_h_prev += &params.u_r.t().dot(&d_r_pre);
    (d_x, d_h_prev)
}

/// Two-logit MLP: `W2 tanh(W1 h + b1) + b2`, class 1 = accident.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbHeadParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ProbHeadParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_hidden: usize, d_mlp: usize) -> Self {
        Self {
            w1: init_matrix(rng, d_mlp, d_hidden),
            b1: init_vector(rng, d_mlp, d_hidden),
            w2: init_matrix(rng, 2, d_mlp),
            b2: init_vector(rng, 2, d_mlp),
        }
    }

    pub fn zeros(d_hidden: usize, d_mlp: usize) -> Self {
        Self {
            w1: Array2::zeros((d_mlp, d_hidden)),
            b1: Array1::zeros(d_mlp),
            w2: Array2::zeros((2, d_mlp)),
            b2: Array1::zeros(2),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProbTrace {
    pub activation: Array1<f64>,
    pub logits: Array1<f64>,
    pub prob: f64,
}

pub fn predict_prob_traced(h: ArrayView1<f64>, params: &ProbHeadParams) -> Result<ProbTrace> {
    check_len("probability head input", params.w1.ncols(), h.len())?;
    let activation = (params.w1.dot(&h) + &params.b1).mapv(f64::tanh);
    let logits = params.w2.dot(&activation) + &params.b2;
    let prob = sigmoid(logits[1] - logits[0]);
    Ok(ProbTrace {
        activation,
        logits,
        prob,
    })
}

/// Accident-class component of the two-way softmax.
pub fn predict_prob(h: ArrayView1<f64>, params: &ProbHeadParams) -> Result<f64> {
    predict_prob_traced(h, params).map(|t| t.prob)
}

/// Backward from `d_prob`; returns the gradient w.r.t. the head input.
pub fn predict_prob_backward(
    trace: &ProbTrace,
    h: ArrayView1<f64>,
    d_prob: f64,
    params: &ProbHeadParams,
    grads: &mut ProbHeadParams,
) -> Array1<f64> {
    let slope = d_prob * trace.prob * (1.0 - trace.prob);
    let d_logits = Array1::from(vec![-slope, slope]);
    add_outer(&mut grads.w2, d_logits.view(), trace.activation.view());
    grads.b2 += &d_logits;
    let d_pre = params.w2.t().dot(&d_logits) * trace.activation.mapv(|a| 1.0 - a * a);
    add_outer(&mut grads.w1, d_pre.view(), h);
    grads.b1 += &d_pre;
    params.w1.t().dot(&d_pre)
}

/// Scalar projection feeding `omega = 1 + sigmoid(w . h + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWeightParams {
    pub w: Array1<f64>,
    /// Length-1 bias.
    pub b: Array1<f64>,
}

impl TimeWeightParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_hidden: usize) -> Self {
        Self {
            w: init_vector(rng, d_hidden, d_hidden),
            b: init_vector(rng, 1, d_hidden),
        }
    }

    pub fn zeros(d_hidden: usize) -> Self {
        Self {
            w: Array1::zeros(d_hidden),
            b: Array1::zeros(1),
        }
    }
}

pub fn time_weight(h: ArrayView1<f64>, params: &TimeWeightParams) -> Result<f64> {
    check_len("time weight input", params.w.len(), h.len())?;
    Ok(1.0 + sigmoid(params.w.dot(&h) + params.b[0]))
}

/// Backward from `d_omega`; returns the gradient w.r.t. `h`.
pub fn time_weight_backward(
    omega: f64,
    h: ArrayView1<f64>,
    d_omega: f64,
    params: &TimeWeightParams,
    grads: &mut TimeWeightParams,
) -> Array1<f64> {
    let s = omega - 1.0;
    let d_pre = d_omega * s * (1.0 - s);
    grads.w.scaled_add(d_pre, &h);
    grads.b[0] += d_pre;
    &params.w * d_pre
}

/// FIFO buffer of the latest `capacity` hidden states.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    states: VecDeque<Array1<f64>>,
}

impl HistoryBuffer {
    /// A capacity of 0 means no history: the summary is the latest state.
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            states: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &Array1<f64>> {
        self.states.iter()
    }

    pub fn push(&mut self, h: Array1<f64>) {
        self.states.push_back(h);
        while self.states.len() > self.capacity.max(1) {
            self.states.pop_front();
        }
    }

    pub fn summary(&self) -> Result<Array1<f64>> {
        let first = self
            .states
            .front()
            .ok_or_else(|| Error::Domain("history summary of an empty buffer".into()))?;
        let mut mean = Array1::zeros(first.len());
        for s in &self.states {
            mean += s;
        }
        Ok(mean / self.states.len() as f64)
    }
}

/// Number of states averaged into the summary at 0-based frame `t`.
pub fn window_span(window: usize, t: usize) -> usize {
    window.max(1).min(t + 1)
}
