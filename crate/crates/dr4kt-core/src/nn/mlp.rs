//! Two-layer sigmoid-headed MLP: sigmoid(w2 . relu(W1 x + b1) + b2).
//!
//! Both the question tendency estimator and the discrimination predictor are
//! this shape; they differ only in input dimension and in what gets
//! concatenated into `x`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, Mat};
use super::{clamp_prob, sigmoid, xavier, ParamTensors};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SigmoidMlp {
    pub w1: Mat, // hidden x in
    pub b1: Mat, // 1 x hidden
    pub w2: Mat, // 1 x hidden
    pub b2: Mat, // 1 x 1
}

/// Forward cache for one example; everything backward needs.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    /// Post-ReLU, post-dropout hidden activations.
    pub h: Vec<f64>,
    /// Inverted-dropout mask (0 or 1/keep); `None` when dropout is off.
    pub mask: Option<Vec<f64>>,
    pub logit: f64,
    /// Clamped probability output.
    pub p: f64,
}

#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

impl SigmoidMlp {
    pub fn new(in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        SigmoidMlp {
            w1: xavier(hidden, in_dim, in_dim, hidden, rng),
            b1: Mat::zeros(1, hidden),
            w2: xavier(1, hidden, hidden, 1, rng),
            b2: Mat::zeros(1, 1),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    /// Forward pass. `dropout` draws an inverted-dropout mask on the hidden
    /// layer; pass `None` for deterministic evaluation.
    pub fn forward(&self, x: &[f64], dropout: Option<(f64, &mut ChaCha8Rng)>) -> MlpCache {
        debug_assert_eq!(x.len(), self.in_dim());
        let mut z1 = self.w1.matvec(x);
        for (z, b) in z1.iter_mut().zip(self.b1.data()) {
            *z += b;
        }
        let mut h: Vec<f64> = z1.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect();
        let mask = match dropout {
            Some((rate, rng)) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let mask: Vec<f64> = h
                    .iter()
                    .map(|_| {
                        if rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                for (hv, m) in h.iter_mut().zip(&mask) {
                    *hv *= m;
                }
                Some(mask)
            }
            _ => None,
        };
        let logit = dot(self.w2.row(0), &h) + self.b2.data()[0];
        MlpCache {
            x: x.to_vec(),
            z1,
            h,
            mask,
            logit,
            p: clamp_prob(sigmoid(logit)),
        }
    }

    /// Backward pass given dL/dlogit. Accumulates parameter gradients into
    /// `grads` and, when `dx` is given, accumulates dL/dx into it.
    pub fn backward(
        &self,
        cache: &MlpCache,
        dlogit: f64,
        grads: &mut MlpGrads,
        dx: Option<&mut [f64]>,
    ) {
        // Output layer.
        axpy(grads.w2.row_mut(0), dlogit, &cache.h);
        grads.b2.data_mut()[0] += dlogit;

        // Hidden layer: back through dropout mask and ReLU.
        let mut dz1: Vec<f64> = self.w2.row(0).iter().map(|w| dlogit * w).collect();
        if let Some(mask) = &cache.mask {
            for (d, m) in dz1.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        for (d, z) in dz1.iter_mut().zip(&cache.z1) {
            if *z <= 0.0 {
                *d = 0.0;
            }
        }

        grads.w1.add_outer(&dz1, &cache.x);
        for (b, d) in grads.b1.data_mut().iter_mut().zip(&dz1) {
            *b += d;
        }
        if let Some(dx) = dx {
            self.w1.tmatvec_acc(&dz1, dx);
        }
    }

    /// Sum of squared weights of the two linear layers (biases excluded);
    /// the L2 penalty term is `l2 * l2_weight_sq()`.
    pub fn l2_weight_sq(&self) -> f64 {
        self.w1.norm_sq() + self.w2.norm_sq()
    }

    /// Gradient contribution of the `l2 * l2_weight_sq()` penalty.
    pub fn add_l2_grads(&self, grads: &mut MlpGrads, l2: f64) {
        if l2 > 0.0 {
            grads.w1.add_scaled(&self.w1, 2.0 * l2);
            grads.w2.add_scaled(&self.w2, 2.0 * l2);
        }
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            w1: self.w1.zeros_like(),
            b1: self.b1.zeros_like(),
            w2: self.w2.zeros_like(),
            b2: self.b2.zeros_like(),
        }
    }
}

impl ParamTensors for SigmoidMlp {
    fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        vec![
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

impl ParamTensors for MlpGrads {
    fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        vec![
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

impl MlpGrads {
    pub fn add_assign(&mut self, other: &MlpGrads) {
        self.w1.add_assign(&other.w1);
        self.b1.add_assign(&other.b1);
        self.w2.add_assign(&other.w2);
        self.b2.add_assign(&other.b2);
    }
}
