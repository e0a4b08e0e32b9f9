//! Discrimination-aware score fusion: an MLP that predicts a response's
//! discrimination from the backbone's knowledge state plus the question's
//! frozen embedding features, a temperature map turning that prediction
//! into a fusion factor, and the convex combination of backbone score and
//! question tendency that is served at prediction time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::finite_diff_max_rel_error;
use crate::nn::{Mat, MlpCache, MlpGrads, ParamTensors, SigmoidMlp, PROB_EPS};

/// The discrimination predictor head. Its input is
/// [state (d_m), question features (d_q + d_c)] where the question features
/// come from the FROZEN tendency estimator's embeddings, shared read-only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscriminationPredictor {
    pub mlp: SigmoidMlp,
    d_m: usize,
}

impl DiscriminationPredictor {
    pub fn new(d_m: usize, d_q: usize, d_c: usize, d_hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4a_0003);
        DiscriminationPredictor {
            mlp: SigmoidMlp::new(d_m + d_q + d_c, d_hidden, &mut rng),
            d_m,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.d_m
    }

    /// Predicted discrimination in (0,1). `state` must have dimension d_m;
    /// `question_features` is the frozen [e, qC] vector.
    pub fn forward(
        &self,
        state: &[f64],
        question_features: &[f64],
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> MlpCache {
        debug_assert_eq!(state.len(), self.d_m);
        let mut x = Vec::with_capacity(state.len() + question_features.len());
        x.extend_from_slice(state);
        x.extend_from_slice(question_features);
        self.mlp.forward(&x, dropout)
    }

    /// Backward from dLoss/dlogit; accumulates MLP gradients and adds the
    /// gradient w.r.t. the state into `dstate` (the multi-task path back
    /// into the backbone). No gradient flows into the frozen features.
    pub fn backward(
        &self,
        cache: &MlpCache,
        dlogit: f64,
        grads: &mut MlpGrads,
        dstate: Option<&mut [f64]>,
    ) {
        match dstate {
            Some(ds) => {
                let mut dx = vec![0.0; cache.x.len()];
                self.mlp.backward(cache, dlogit, grads, Some(&mut dx));
                for (d, v) in ds.iter_mut().zip(&dx[..self.d_m]) {
                    *d += v;
                }
            }
            None => self.mlp.backward(cache, dlogit, grads, None),
        }
    }
}

/// Fusion factor from a predicted discrimination under temperature `tau`:
/// zeta = delta_hat^(1/tau), with delta_hat clamped to [1e-6, 1] before the
/// log. Strictly increasing in delta_hat; 1 is a fixed point.
pub fn fusion_factor(delta_hat: f64, tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let d = delta_hat.clamp(PROB_EPS, 1.0);
    Ok((d.ln() / tau).exp())
}

/// Convex score fusion: zeta * backbone score + (1 - zeta) * tendency.
/// High predicted discrimination pushes the served score toward the
/// backbone; low discrimination toward the question's own tendency.
pub fn fuse_scores(kt_score: f64, tendency: f64, zeta: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&zeta));
    zeta * kt_score + (1.0 - zeta) * tendency
}

/// One labeled example for the predictor gradient check.
pub struct PredictorCheckItem {
    pub state: Vec<f64>,
    pub question_features: Vec<f64>,
    pub target: f64,
}

/// Mean squared error of the predictor on a batch (no dropout).
pub fn predictor_mse(predictor: &SigmoidMlp, items: &[PredictorCheckItem]) -> f64 {
    let mut sum = 0.0;
    for item in items {
        let mut x = item.state.clone();
        x.extend_from_slice(&item.question_features);
        let p = predictor.forward(&x, None).p;
        sum += (item.target - p) * (item.target - p);
    }
    sum / items.len() as f64
}

/// Finite-difference check of the predictor's gradients through the MSE
/// discrimination loss; returns the max relative error.
pub fn predictor_gradient_check(
    predictor: &mut DiscriminationPredictor,
    items: &[PredictorCheckItem],
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Data("gradient check needs a non-empty batch".into()));
    }
    let mut grads = predictor.mlp.zero_grads();
    let scale = 1.0 / items.len() as f64;
    for item in items {
        let cache = predictor.forward(&item.state, &item.question_features, None);
        // d/dlogit of (target - p)^2 = 2 (p - target) p (1 - p)
        let dlogit = 2.0 * (cache.p - item.target) * cache.p * (1.0 - cache.p) * scale;
        predictor.backward(&cache, dlogit, &mut grads, None);
    }
    let analytic: Vec<Mat> = grads
        .tensors()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();
    Ok(finite_diff_max_rel_error(
        &mut predictor.mlp,
        &analytic,
        |mlp| predictor_mse(mlp, items),
        1e-5,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_params_predict_half() {
        let mut p = DiscriminationPredictor::new(4, 3, 2, 5, 0);
        for (_, t) in p.mlp.tensors_mut() {
            t.fill(0.0);
        }
        let out = p.forward(&[0.4; 4], &[0.1; 5], None);
        assert_eq!(out.p, 0.5);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let p = DiscriminationPredictor::new(4, 3, 2, 5, 77);
        let state = [0.3, -0.2, 0.8, 0.05];
        let features = [0.4, -0.6, 0.2, 0.0, 1.1];
        let out = p.forward(&state, &features, None);

        let mut x: Vec<f64> = state.to_vec();
        x.extend_from_slice(&features);
        let hidden = p.mlp.w1.rows();
        let mut logit = p.mlp.b2.data()[0];
        for j in 0..hidden {
            let mut z = p.mlp.b1.data()[j];
            for (k, xv) in x.iter().enumerate() {
                z += p.mlp.w1.row(j)[k] * xv;
            }
            logit += p.mlp.w2.row(0)[j] * z.max(0.0);
        }
        let oracle = 1.0 / (1.0 + (-logit).exp());
        assert!((out.p - oracle).abs() < 1e-10);
    }

    #[test]
    fn different_states_usually_give_different_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut distinct = 0;
        for trial in 0..20 {
            let p = DiscriminationPredictor::new(6, 4, 3, 8, 1000 + trial);
            let features: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m1: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m2: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d1 = p.forward(&m1, &features, None).p;
            let d2 = p.forward(&m2, &features, None).p;
            if (d1 - d2).abs() > 1e-9 {
                distinct += 1;
            }
        }
        assert!(
            distinct >= 19,
            "personalization failed: {distinct}/20 distinct"
        );
    }

    #[test]
    fn fusion_factor_closed_forms() {
        assert!((fusion_factor(0.25, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((fusion_factor(1.0, 0.7).unwrap() - 1.0).abs() < 1e-12);
        assert!((fusion_factor(0.37, 1.0).unwrap() - 0.37).abs() < 1e-12);
        assert!(fusion_factor(0.5, 0.0).is_err());
    }

    #[test]
    fn fusion_factor_is_strictly_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..300 {
            let tau = rng.gen_range(0.2..4.0);
            let (mut a, mut b) = (rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99));
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            if a == b {
                continue;
            }
            assert!(fusion_factor(a, tau).unwrap() < fusion_factor(b, tau).unwrap());
        }
    }

    #[test]
    fn fuse_scores_endpoints_and_midpoint() {
        assert_eq!(fuse_scores(0.73, 0.21, 1.0), 0.73);
        assert_eq!(fuse_scores(0.73, 0.21, 0.0), 0.21);
        assert!((fuse_scores(0.9, 0.1, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fused_score_stays_inside_the_span_of_its_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let a = rng.gen_range(0.0..1.0);
            let b = rng.gen_range(0.0..1.0);
            let z = rng.gen_range(0.0..=1.0);
            let y = fuse_scores(a, b, z);
            assert!(y >= a.min(b) - 1e-15 && y <= a.max(b) + 1e-15);
        }
    }

    #[test]
    fn extreme_discrimination_hands_control_to_one_side() {
        let tau = 1.5;
        let near_one = fusion_factor(1.0 - 1e-9, tau).unwrap();
        assert!((near_one - 1.0).abs() < 1e-6);
        let near_zero = fusion_factor(1e-9, tau).unwrap();
        assert!(near_zero < 1e-3);
        let a_kt = 0.9;
        let tendency = 0.2;
        assert!((fuse_scores(a_kt, tendency, near_one) - a_kt).abs() < 1e-6);
        assert!((fuse_scores(a_kt, tendency, near_zero) - tendency).abs() < 1e-3);
    }

    #[test]
    fn gradient_check_through_disc_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut predictor = DiscriminationPredictor::new(5, 4, 3, 6, 9);
        let items: Vec<PredictorCheckItem> = (0..8)
            .map(|_| PredictorCheckItem {
                state: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                question_features: (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                target: rng.gen_range(0.05..0.95),
            })
            .collect();
        let err = predictor_gradient_check(&mut predictor, &items).unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn backward_reports_state_gradients() {
        // Finite-difference the loss w.r.t. the state input itself to pin
        // down the multi-task path into the backbone.
        let predictor = DiscriminationPredictor::new(4, 2, 2, 5, 33);
        let state = vec![0.2, -0.4, 0.6, 0.1];
        let features = vec![0.5, -0.1, 0.3, 0.9];
        let target = 0.3;

        let cache = predictor.forward(&state, &features, None);
        let dlogit = 2.0 * (cache.p - target) * cache.p * (1.0 - cache.p);
        let mut grads = predictor.mlp.zero_grads();
        let mut dstate = vec![0.0; 4];
        predictor.backward(&cache, dlogit, &mut grads, Some(&mut dstate));

        let h = 1e-6;
        for j in 0..4 {
            let mut sp = state.clone();
            sp[j] += h;
            let lp = {
                let p = predictor.forward(&sp, &features, None).p;
                (target - p) * (target - p)
            };
            sp[j] -= 2.0 * h;
            let lm = {
                let p = predictor.forward(&sp, &features, None).p;
                (target - p) * (target - p)
            };
            let numeric = (lp - lm) / (2.0 * h);
            assert!(
                (numeric - dstate[j]).abs() < 1e-6,
                "state grad {j}: {numeric} vs {}",
                dstate[j]
            );
        }
    }
}
