//! Object-aware attention over the per-frame object set, conditioned on the
//! previous recurrent state.
//!
//! For each present object `k`:
//! `e_k = tanh(W_h h_prev + W_o f_k + b)`, `s_k = w_s . e_k`, and the weights
//! are a softmax of `s` over present objects. Each object vector is then
//! scaled by its weight. Absent objects receive weight 0.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::{add_outer, init_matrix, init_vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// `d_att x d_hidden`
    pub w_hidden: Array2<f64>,
    /// `d_att x d_obj`
    pub w_object: Array2<f64>,
    pub bias: Array1<f64>,
    /// Scores each object's energy vector.
    pub w_score: Array1<f64>,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_att: usize, d_hidden: usize, d_obj: usize) -> Self {
        Self {
            w_hidden: init_matrix(rng, d_att, d_hidden),
            w_object: init_matrix(rng, d_att, d_obj),
            bias: init_vector(rng, d_att, d_hidden + d_obj),
            w_score: init_vector(rng, d_att, d_att),
        }
    }

    pub fn zeros(d_att: usize, d_hidden: usize, d_obj: usize) -> Self {
        Self {
            w_hidden: Array2::zeros((d_att, d_hidden)),
            w_object: Array2::zeros((d_att, d_obj)),
            bias: Array1::zeros(d_att),
            w_score: Array1::zeros(d_att),
        }
    }
}

/// Result of attending over one frame's objects.
#[derive(Clone, Debug, PartialEq)]
pub struct Attended {
    /// `K` weights; zero for absent objects, summing to 1 over present ones.
    pub weights: Array1<f64>,
    /// `K x d_obj`, row `k` is `weights[k] * f_k`.
    pub refined: Array2<f64>,
    /// `K x d_att` tanh energies (zero rows for absent objects or the
    /// uniform path).
    energies: Array2<f64>,
    learned: bool,
}

fn present_count(mask: ArrayView1<bool>) -> Result<usize> {
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyFrame { frame: None }),
        n => Ok(n),
    }
}

fn scale_rows(objects: ArrayView2<f64>, weights: &Array1<f64>) -> Array2<f64> {
    let mut refined = objects.to_owned();
    for (mut row, &w) in refined.rows_mut().into_iter().zip(weights.iter()) {
        row *= w;
    }
    refined
}

pub fn attend(
    objects: ArrayView2<f64>,
    mask: ArrayView1<bool>,
    h_prev: ArrayView1<f64>,
    params: &AttentionParams,
) -> Result<Attended> {
    let (k, d_obj) = objects.dim();
    check_len("attention mask", k, mask.len())?;
    check_len("attention object width", params.w_object.ncols(), d_obj)?;
    check_len("attention hidden width", params.w_hidden.ncols(), h_prev.len())?;
    present_count(mask)?;

    let d_att = params.bias.len();
    let context = params.w_hidden.dot(&h_prev) + &params.bias;
    let mut energies = Array2::zeros((k, d_att));
    let mut scores = Array1::from_elem(k, f64::NEG_INFINITY);
    for slot in (0..k).filter(|&s| mask[s]) {
        let e = (params.w_object.dot(&objects.row(slot)) + &context).mapv(f64::tanh);
        scores[slot] = params.w_score.dot(&e);
        energies.row_mut(slot).assign(&e);
    }
    let weights = masked_softmax(&scores);
    let refined = scale_rows(objects, &weights);
    Ok(Attended {
        weights,
        refined,
        energies,
        learned: true,
    })
}

/// Ablation path: equal weight on every present object.
pub fn uniform(objects: ArrayView2<f64>, mask: ArrayView1<bool>) -> Result<Attended> {
    let (k, _) = objects.dim();
    check_len("attention mask", k, mask.len())?;
    let n = present_count(mask)? as f64;
    let weights = mask.mapv(|m| if m { 1.0 / n } else { 0.0 });
    let refined = scale_rows(objects, &weights);
    Ok(Attended {
        weights,
        refined,
        energies: Array2::zeros((k, 0)),
        learned: false,
    })
}

/// Softmax where `-inf` entries get exactly zero weight.
fn masked_softmax(scores: &Array1<f64>) -> Array1<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = scores.mapv(|s| if s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() });
    let total = exps.sum();
    exps / total
}

/// Backpropagates `d_refined` (gradient w.r.t. the refined object rows).
/// Accumulates parameter gradients into `grads` and returns the gradient
/// w.r.t. `h_prev`.
pub fn attend_backward(
    attended: &Attended,
    objects: ArrayView2<f64>,
    mask: ArrayView1<bool>,
    h_prev: ArrayView1<f64>,
    d_refined: ArrayView2<f64>,
    params: &AttentionParams,
    grads: &mut AttentionParams,
) -> Array1<f64> {
    let mut d_h_prev = Array1::zeros(h_prev.len());
    if !attended.learned {
        return d_h_prev;
    }
    let k = objects.nrows();
    let d_weights: Array1<f64> = (0..k)
        .map(|s| {
            if mask[s] {
                objects.row(s).dot(&d_refined.row(s))
            } else {
                0.0
            }
        })
        .collect();
    let weighted_mean = attended.weights.dot(&d_weights);

    let mut d_context = Array1::zeros(params.bias.len());
    for slot in (0..k).filter(|&s| mask[s]) {
        let d_score = attended.weights[slot] * (d_weights[slot] - weighted_mean);
        let e = attended.energies.row(slot);
        grads.w_score.scaled_add(d_score, &e);
        let d_pre = e.mapv(|v| 1.0 - v * v) * (d_score * &params.w_score);
        add_outer(&mut grads.w_object, d_pre.view(), objects.row(slot));
        d_context += &d_pre;
    }
    add_outer(&mut grads.w_hidden, d_context.view(), h_prev);
    grads.bias += &d_context;
    d_h_prev += &params.w_hidden.t().dot(&d_context);
    d_h_prev
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_params() -> AttentionParams {
        AttentionParams {
            w_hidden: array![[0.1, -0.2], [0.3, 0.05]],
            w_object: array![[0.4, 0.1], [-0.2, 0.5]],
            bias: array![0.01, -0.03],
            w_score: array![0.7, -0.6],
        }
    }

    #[test]
    fn zero_params_give_uniform_weights() {
        let objects = array![[3.0, 0.0], [0.0, 6.0], [9.0, 3.0]];
        let mask = array![true, true, true];
        let out = attend(
            objects.view(),
            mask.view(),
            array![0.5, 0.5].view(),
            &AttentionParams::zeros(2, 2, 2),
        )
        .unwrap();
        for w in out.weights.iter() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let expected = &objects / 3.0;
        for (a, b) in out.refined.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_present_object_keeps_its_features() {
        let objects = array![[1.0, 2.0], [5.0, 5.0]];
        let mask = array![true, false];
        let out = attend(objects.view(), mask.view(), array![0.3, -0.1].view(), &small_params()).unwrap();
        assert_eq!(out.weights, array![1.0, 0.0]);
        assert_eq!(out.refined.row(0), objects.row(0));
        assert_eq!(out.refined.row(1), array![0.0, 0.0]);
    }

    #[test]
    fn matches_hand_evaluation() {
        // Hand evaluation of the energy/score/softmax chain, K=2, d=2.
        let p = small_params();
        let h = [0.3, -0.1];
        let f = [[1.0, 2.0], [-0.5, 0.25]];
        let mut scores = [0.0; 2];
        for k in 0..2 {
            let mut s = 0.0;
            for a in 0..2 {
                let pre = p.w_hidden[[a, 0]] * h[0]
                    + p.w_hidden[[a, 1]] * h[1]
                    + p.w_object[[a, 0]] * f[k][0]
                    + p.w_object[[a, 1]] * f[k][1]
                    + p.bias[a];
                s += p.w_score[a] * pre.tanh();
            }
            scores[k] = s;
        }
        let z = scores[0].exp() + scores[1].exp();
        let expected = [scores[0].exp() / z, scores[1].exp() / z];

        let objects = array![[1.0, 2.0], [-0.5, 0.25]];
        let out = attend(objects.view(), array![true, true].view(), array![0.3, -0.1].view(), &p).unwrap();
        assert!((out.weights[0] - expected[0]).abs() < 1e-12);
        assert!((out.weights[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn empty_frame_is_an_error() {
        let objects = array![[1.0, 2.0]];
        let err = attend(
            objects.view(),
            array![false].view(),
            array![0.0, 0.0].view(),
            &small_params(),
        );
        assert!(matches!(err, Err(Error::EmptyFrame { .. })));
        assert!(matches!(
            uniform(objects.view(), array![false].view()),
            Err(Error::EmptyFrame { .. })
        ));
    }

    #[test]
    fn score_shift_leaves_weights_unchanged() {
        let scores = array![0.3, -1.2, f64::NEG_INFINITY, 2.0];
        let shifted = scores.mapv(|s| s + 17.5);
        let a = masked_softmax(&scores);
        let b = masked_softmax(&shifted);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a[2], 0.0);
    }

    #[test]
    fn backward_matches_central_differences() {
        let p = small_params();
        let objects = array![[1.0, 2.0], [-0.5, 0.25], [0.7, -0.9]];
        let mask = array![true, false, true];
        let h = array![0.3, -0.1];
        let upstream = array![[0.2, -0.4], [1.0, 1.0], [0.6, 0.3]];
        let loss = |p: &AttentionParams, h: &Array1<f64>| {
            let out = attend(objects.view(), mask.view(), h.view(), p).unwrap();
            (&out.refined * &upstream).sum()
        };

        let out = attend(objects.view(), mask.view(), h.view(), &p).unwrap();
        let mut grads = AttentionParams::zeros(2, 2, 2);
        let d_h = attend_backward(
            &out,
            objects.view(),
            mask.view(),
            h.view(),
            upstream.view(),
            &p,
            &mut grads,
        );

        let step = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for i in 0..2 {
            let mut hp = h.clone();
            hp[i] += step;
            let mut hm = h.clone();
            hm[i] -= step;
            let numeric = (loss(&p, &hp) - loss(&p, &hm)) / (2.0 * step);
            assert!(rel(d_h[i], numeric) < 1e-6, "h[{i}]: {} vs {numeric}", d_h[i]);
        }
        for (idx, analytic) in grads.w_object.indexed_iter() {
            let mut pp = p.clone();
            pp.w_object[idx] += step;
            let mut pm = p.clone();
            pm.w_object[idx] -= step;
            let numeric = (loss(&pp, &h) - loss(&pm, &h)) / (2.0 * step);
            assert!(rel(*analytic, numeric) < 1e-6);
        }
        for (i, analytic) in grads.w_score.iter().enumerate() {
            let mut pp = p.clone();
            pp.w_score[i] += step;
            let mut pm = p.clone();
            pm.w_score[i] -= step;
            let numeric = (loss(&pp, &h) - loss(&pm, &h)) / (2.0 * step);
            assert!(rel(*analytic, numeric) < 1e-6);
        }
    }
}
