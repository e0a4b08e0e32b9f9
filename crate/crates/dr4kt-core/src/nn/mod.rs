//! Minimal neural-network toolkit: matrices, a sigmoid-headed MLP, Adam,
//! and gradient utilities. Backpropagation is written by hand per model and
//! verified against central finite differences in the test suites.

pub mod adam;
pub mod matrix;
pub mod mlp;

pub use adam::Adam;
pub use matrix::{axpy, dot, Mat};
pub use mlp::{MlpCache, MlpGrads, SigmoidMlp};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Probabilities are clamped away from {0, 1} before any log is taken.
pub const PROB_EPS: f64 = 1e-6;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Clamp a probability into [PROB_EPS, 1 - PROB_EPS].
#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Uniform access to a model's parameter tensors, in a fixed documented
/// order. Drives the optimizer, checkpointing and finite-difference checks.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<(&'static str, &Mat)>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }
}

/// Global L2 norm across a gradient tensor list.
pub fn global_norm(tensors: &[(&'static str, &Mat)]) -> f64 {
    tensors.iter().map(|(_, t)| t.norm_sq()).sum::<f64>().sqrt()
}

/// Scale all gradients in place so the global norm is at most `max_norm`.
pub fn clip_global_norm<T: ParamTensors>(grads: &mut T, max_norm: f64) {
    let norm = global_norm(&grads.tensors());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.scale(s);
        }
    }
}

/// Xavier-style uniform init: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
pub fn xavier(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Mat {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

/// Small uniform init for embedding tables.
pub fn embedding_init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let bound = 1.0 / (cols as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}
