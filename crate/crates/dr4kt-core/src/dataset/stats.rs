//! Train-split response statistics: per-question pass rates, empirical
//! discrimination, and the binned discrimination histogram.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

use super::{InteractionSequence, ResponseRecord};

/// Number of uniform discrimination bins used in histograms and level
/// reports: [0,0.2), [0.2,0.4), [0.4,0.6), [0.6,0.8), [0.8,1.0].
pub const HISTOGRAM_BINS: usize = 5;

/// Questions answered fewer times than this in the reference set are left
/// out of histograms and level bins (their empirical discrimination is too
/// noisy to present).
pub const MIN_QUESTION_COUNT: u32 = 10;

/// Per-question pass rate and answer count over a reference response set.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct QuestionStats {
    map: BTreeMap<String, (f64, u32)>,
}

impl QuestionStats {
    /// Mean correctness for a question, if it appears in the reference set.
    pub fn pass_rate(&self, question_id: &str) -> Option<f64> {
        self.map.get(question_id).map(|&(rate, _)| rate)
    }

    pub fn count(&self, question_id: &str) -> u32 {
        self.map.get(question_id).map(|&(_, n)| n).unwrap_or(0)
    }

    /// Empirical discrimination of a (question, label) pair against this
    /// reference set: the share of reference answers to the same question
    /// with the opposite correctness. `None` when the question is absent.
    pub fn discrimination(&self, question_id: &str, label: u8) -> Option<f64> {
        self.pass_rate(question_id)
            .map(|rate| if label == 1 { 1.0 - rate } else { rate })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64, u32)> {
        self.map.iter().map(|(q, &(rate, n))| (q.as_str(), rate, n))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, f64, u32)>) -> Self {
        QuestionStats {
            map: entries.into_iter().map(|(q, r, n)| (q, (r, n))).collect(),
        }
    }
}

/// Pass rates over the given (train) sequences. Parallelized across
/// sequences; per-sequence partials are merged in input order so the result
/// is identical to the sequential computation.
pub fn question_pass_rate(train: &[InteractionSequence]) -> QuestionStats {
    merge_counts(par::map_collect(train, sequence_counts))
}

/// Sequential twin of [`question_pass_rate`]; used by benches and the
/// parallel-equivalence tests.
pub fn question_pass_rate_seq(train: &[InteractionSequence]) -> QuestionStats {
    merge_counts(par::map_collect_seq(train, sequence_counts))
}

fn sequence_counts(seq: &InteractionSequence) -> Vec<(&str, u32, u32)> {
    let mut local: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
    for r in &seq.responses {
        let e = local.entry(r.question_id.as_str()).or_insert((0, 0));
        e.0 += u32::from(r.correctness);
        e.1 += 1;
    }
    local.into_iter().map(|(q, (c, n))| (q, c, n)).collect()
}

fn merge_counts(partials: Vec<Vec<(&str, u32, u32)>>) -> QuestionStats {
    let mut totals: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for partial in &partials {
        for &(q, correct, n) in partial {
            let e = totals.entry(q).or_insert((0, 0));
            e.0 += u64::from(correct);
            e.1 += u64::from(n);
        }
    }
    QuestionStats {
        map: totals
            .into_iter()
            .map(|(q, (c, n))| (q.to_string(), (c as f64 / n as f64, n as u32)))
            .collect(),
    }
}

/// Empirical discrimination of a target (question, label) against an
/// explicit reference set: the fraction of reference responses to the same
/// question whose correctness differs from the target's. Counts include the
/// target's own occurrence whenever it is part of the reference set.
pub fn empirical_discrimination(
    reference: &[ResponseRecord],
    target_question: &str,
    target_label: u8,
) -> Option<f64> {
    let mut total = 0u64;
    let mut opposite = 0u64;
    for r in reference {
        if r.question_id == target_question {
            total += 1;
            if r.correctness != target_label {
                opposite += 1;
            }
        }
    }
    if total == 0 {
        None
    } else {
        Some(opposite as f64 / total as f64)
    }
}

/// Binned discrimination distribution over a response population.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Histogram {
    /// Share of kept responses per bin; sums to 1.
    pub proportions: [f64; HISTOGRAM_BINS],
    pub counts: [u64; HISTOGRAM_BINS],
    /// Responses excluded because their question has too few reference
    /// answers (or none at all).
    pub filtered_out: u64,
    /// Exact share of kept responses with discrimination below 0.5.
    pub low_share: f64,
}

impl Histogram {
    pub fn total_kept(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Discrimination bin index under the [0,0.2),...,[0.8,1.0] convention.
pub fn discrimination_bin(delta: f64) -> usize {
    debug_assert!((0.0..=1.0).contains(&delta));
    ((delta * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1)
}

/// Histogram of empirical discrimination over `responses`, using `stats` as
/// the reference. Responses whose question has fewer than
/// `min_question_count` reference answers are excluded and counted in
/// `filtered_out`.
pub fn discrimination_histogram(
    responses: &[&ResponseRecord],
    stats: &QuestionStats,
    min_question_count: u32,
) -> Result<Histogram> {
    let mut counts = [0u64; HISTOGRAM_BINS];
    let mut low = 0u64;
    let mut filtered = 0u64;
    for r in responses {
        if stats.count(&r.question_id) < min_question_count {
            filtered += 1;
            continue;
        }
        let delta = stats
            .discrimination(&r.question_id, r.correctness)
            .expect("count >= min implies presence");
        counts[discrimination_bin(delta)] += 1;
        if delta < 0.5 {
            low += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Data(
            "no responses remain after the minimum-count filter".into(),
        ));
    }
    let mut proportions = [0f64; HISTOGRAM_BINS];
    for (p, &c) in proportions.iter_mut().zip(&counts) {
        *p = c as f64 / total as f64;
    }
    Ok(Histogram {
        proportions,
        counts,
        filtered_out: filtered,
        low_share: low as f64 / total as f64,
    })
}
