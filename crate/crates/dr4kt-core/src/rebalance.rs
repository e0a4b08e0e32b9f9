//! Discrimination rebalancing primitives: the closed-form discrimination
//! score derived from a question's tendency and the observed label, the
//! temperature map that turns discrimination into a loss weight, the
//! reweighted binary cross-entropy, and the inverse-propensity baseline
//! weighter.

use crate::dataset::{InteractionSequence, QuestionStats};
use crate::error::{Error, Result};

/// Discrimination of a response given its question's tendency score and the
/// ground-truth label:
///
///   delta = (1 - tendency)^label * tendency^(1 - label)
///
/// i.e. the probability that the label opposes the question's tendency.
pub fn discrimination_score(tendency: f64, label: u8) -> f64 {
    debug_assert!(
        tendency > 0.0 && tendency < 1.0,
        "tendency must be clamped upstream"
    );
    if label == 1 {
        1.0 - tendency
    } else {
        tendency
    }
}

/// Loss weight from a discrimination score under temperature `tau`:
/// w = delta^(1/tau). `tau = 1` is the identity; larger `tau` flattens the
/// weights toward 1; delta = 1 maps to exactly 1 for every temperature.
pub fn response_weight(discrimination: f64, tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    // One-sided clamp: [PROB_EPS, 1], keeping 1 a true fixed point.
    let d = discrimination.clamp(crate::nn::PROB_EPS, 1.0);
    Ok((d.ln() / tau).exp())
}

/// A flat batch of weighted loss terms with a padding mask.
#[derive(Clone, Debug, Default)]
pub struct WeightedLossBatch {
    pub predictions: Vec<f64>,
    pub labels: Vec<u8>,
    pub weights: Vec<f64>,
    /// `true` entries participate in the loss; padded steps are `false`.
    pub mask: Vec<bool>,
}

impl WeightedLossBatch {
    pub fn push(&mut self, prediction: f64, label: u8, weight: f64) {
        self.predictions.push(prediction);
        self.labels.push(label);
        self.weights.push(weight);
        self.mask.push(true);
    }

    fn validate(&self) -> Result<()> {
        let n = self.predictions.len();
        if self.labels.len() != n || self.weights.len() != n || self.mask.len() != n {
            return Err(Error::Data(
                "weighted batch fields have unequal lengths".into(),
            ));
        }
        for (&p, &m) in self.predictions.iter().zip(&self.mask) {
            if m && !(p > 0.0 && p < 1.0) {
                return Err(Error::Numeric(format!(
                    "prediction {p} outside (0,1); clamp upstream"
                )));
            }
        }
        Ok(())
    }
}

/// Mean over unmasked entries of w * bce(prediction, label). With unit
/// weights this is exactly the standard binary cross-entropy.
pub fn reweighted_bce(batch: &WeightedLossBatch) -> Result<f64> {
    batch.validate()?;
    let mut sum = 0.0;
    let mut n = 0u64;
    for i in 0..batch.predictions.len() {
        if !batch.mask[i] {
            continue;
        }
        let p = batch.predictions[i];
        let term = if batch.labels[i] == 1 {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        };
        sum += batch.weights[i] * term;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("weighted batch has no unmasked entries".into()));
    }
    Ok(sum / n as f64)
}

/// Inverse-propensity weights for the IPW baseline: train responses are
/// bucketed into `levels` uniform empirical-discrimination levels, each
/// level's propensity is its frequency, and weights 1/propensity are
/// normalized to mean one over the train set.
///
/// Returns per-level weights; unoccupied levels stay `None`.
pub fn ipw_level_weights(
    train: &[InteractionSequence],
    stats: &QuestionStats,
    levels: usize,
) -> Result<Vec<Option<f64>>> {
    if levels == 0 {
        return Err(Error::Config("ipw levels must be positive".into()));
    }
    let mut counts = vec![0u64; levels];
    let mut total = 0u64;
    for seq in train {
        for r in &seq.responses {
            let delta = stats
                .discrimination(&r.question_id, r.correctness)
                .ok_or_else(|| {
                    Error::Data(format!(
                        "train response references question `{}` missing from train stats",
                        r.question_id
                    ))
                })?;
            counts[ipw_level(delta, levels)] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Data("no train responses for ipw weighting".into()));
    }

    Ok(normalize_ipw(&counts, total))
}

/// Same weighting derived from per-question pass-rate statistics alone:
/// a question answered n times with pass rate r contributes round(r*n)
/// responses at discrimination 1-r and the rest at r.
pub fn ipw_level_weights_from_stats(
    stats: &QuestionStats,
    levels: usize,
) -> Result<Vec<Option<f64>>> {
    if levels == 0 {
        return Err(Error::Config("ipw levels must be positive".into()));
    }
    let mut counts = vec![0u64; levels];
    let mut total = 0u64;
    for (_, rate, n) in stats.iter() {
        let n = u64::from(n);
        let correct = (rate * n as f64).round() as u64;
        counts[ipw_level(1.0 - rate, levels)] += correct;
        counts[ipw_level(rate, levels)] += n - correct;
        total += n;
    }
    if total == 0 {
        return Err(Error::Data("no train responses for ipw weighting".into()));
    }
    Ok(normalize_ipw(&counts, total))
}

fn normalize_ipw(counts: &[u64], total: u64) -> Vec<Option<f64>> {
    let raw: Vec<Option<f64>> = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                None
            } else {
                Some(total as f64 / c as f64) // 1 / (c / total)
            }
        })
        .collect();

    // Normalize to mean 1 over train responses.
    let weighted_sum: f64 = counts
        .iter()
        .zip(&raw)
        .map(|(&c, w)| w.map_or(0.0, |w| w * c as f64))
        .sum();
    let mean = weighted_sum / total as f64;
    raw.into_iter().map(|w| w.map(|w| w / mean)).collect()
}

/// Level index of a discrimination value under `levels` uniform buckets.
pub fn ipw_level(delta: f64, levels: usize) -> usize {
    ((delta * levels as f64).floor() as usize).min(levels - 1)
}
