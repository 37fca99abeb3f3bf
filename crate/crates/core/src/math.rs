//! Scalar and vector helpers shared by the forward and backward passes.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|l| (l - max).exp());
    let total = exps.sum();
    exps / total
}

/// log(sum(exp(x))) without overflow.
pub fn log_sum_exp(logits: ArrayView1<f64>) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Shannon entropy in nats; zero-probability components contribute 0.
pub fn entropy(probs: ArrayView1<f64>) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Uniform fan-in initialisation in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
pub fn init_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

pub fn init_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array1::from_shape_simple_fn(len, || dist.sample(rng))
}

/// Accumulates the outer product `a b^T` into `target`.
pub fn add_outer(target: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in target.rows_mut().into_iter().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}
