//! Metrics: rank-based AUC, thresholded accuracy, and the
//! per-discrimination-level accuracy breakdown.

use serde::{Deserialize, Serialize};

use crate::dataset::{discrimination_bin, QuestionStats, HISTOGRAM_BINS};
use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann-Whitney rank statistic:
/// P(score+ > score-) + 0.5 * P(tie). Ties get average ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("scores must not be NaN")
    });

    // Average ranks over tie groups, accumulating the rank sum of positives.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    Ok((rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Fraction of responses where (score >= threshold) matches the label.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    assert_eq!(scores.len(), labels.len());
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| u8::from(s >= threshold) == l)
        .count();
    hits as f64 / scores.len() as f64
}

/// Accuracy broken down by empirical-discrimination level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelReport {
    /// Accuracy over every response, including those below the question
    /// count threshold.
    pub overall_acc: f64,
    pub overall_count: u64,
    /// Per-bin accuracy over binnable responses; `None` for empty bins.
    pub bin_acc: [Option<f64>; HISTOGRAM_BINS],
    pub bin_counts: [u64; HISTOGRAM_BINS],
    /// Responses whose question has too few reference answers to bin;
    /// reported separately rather than silently dropped.
    pub below_threshold_count: u64,
    pub below_threshold_acc: Option<f64>,
}

impl LevelReport {
    /// Count-weighted mean of the per-bin accuracies, i.e. accuracy over the
    /// binnable subset.
    pub fn binnable_acc(&self) -> Option<f64> {
        let total: u64 = self.bin_counts.iter().sum();
        if total == 0 {
            return None;
        }
        let weighted: f64 = self
            .bin_acc
            .iter()
            .zip(&self.bin_counts)
            .map(|(acc, &n)| acc.unwrap_or(0.0) * n as f64)
            .sum();
        Some(weighted / total as f64)
    }
}

/// One scored response for level binning.
#[derive(Clone, Debug)]
pub struct ScoredResponse<'a> {
    pub question_id: &'a str,
    pub label: u8,
    pub score: f64,
}

/// Bin each response by its train-derived empirical discrimination and
/// report accuracy per bin. Responses whose question has fewer than
/// `min_question_count` train answers are excluded from the bins but kept in
/// the overall number.
pub fn per_level_accuracy(
    responses: &[ScoredResponse<'_>],
    stats: &QuestionStats,
    min_question_count: u32,
    threshold: f64,
) -> LevelReport {
    let mut bin_hits = [0u64; HISTOGRAM_BINS];
    let mut bin_counts = [0u64; HISTOGRAM_BINS];
    let mut below_hits = 0u64;
    let mut below_count = 0u64;
    let mut overall_hits = 0u64;

    for r in responses {
        let hit = u64::from(u8::from(r.score >= threshold) == r.label);
        overall_hits += hit;
        match stats.discrimination(r.question_id, r.label) {
            Some(delta) if stats.count(r.question_id) >= min_question_count => {
                let b = discrimination_bin(delta);
                bin_hits[b] += hit;
                bin_counts[b] += 1;
            }
            _ => {
                below_hits += hit;
                below_count += 1;
            }
        }
    }

    let mut bin_acc = [None; HISTOGRAM_BINS];
    for b in 0..HISTOGRAM_BINS {
        if bin_counts[b] > 0 {
            bin_acc[b] = Some(bin_hits[b] as f64 / bin_counts[b] as f64);
        }
    }
    LevelReport {
        overall_acc: if responses.is_empty() {
            0.0
        } else {
            overall_hits as f64 / responses.len() as f64
        },
        overall_count: responses.len() as u64,
        bin_acc,
        bin_counts,
        below_threshold_count: below_count,
        below_threshold_acc: if below_count > 0 {
            Some(below_hits as f64 / below_count as f64)
        } else {
            None
        },
    }
}
