//! Sequence segmentation and the deterministic train/validation/test split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{InteractionSequence, ResponseRecord};

/// Disjoint train/validation/test sequence sets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<InteractionSequence>,
    pub validation: Vec<InteractionSequence>,
    pub test: Vec<InteractionSequence>,
    pub seed: u64,
}

impl DataSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Cut each student's stream into consecutive chunks of at most `max_len`
/// responses; trailing chunks shorter than `min_len` are dropped. Records are
/// never reordered or duplicated.
pub fn segment_sequences(
    records: &[ResponseRecord],
    max_len: usize,
    min_len: usize,
) -> Vec<InteractionSequence> {
    assert!(min_len >= 1 && max_len >= min_len);
    let mut out = Vec::new();
    let mut start = 0usize;
    while start < records.len() {
        let student = &records[start].student_id;
        let mut end = start;
        while end < records.len() && &records[end].student_id == student {
            end += 1;
        }
        for (chunk, slice) in records[start..end].chunks(max_len).enumerate() {
            if slice.len() >= min_len {
                out.push(InteractionSequence {
                    student_id: student.clone(),
                    chunk,
                    responses: slice.to_vec(),
                });
            }
        }
        start = end;
    }
    out
}

/// Deterministic shuffle-and-partition split. Quotas follow the
/// largest-remainder rule with ties resolved in (train, validation, test)
/// order, so the same inputs and seed always give byte-identical splits.
pub fn split_sequences(
    seqs: Vec<InteractionSequence>,
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<DataSplit> {
    if seqs.len() < 3 {
        return Err(Error::Data(format!(
            "need at least 3 sequences to split, got {}",
            seqs.len()
        )));
    }
    let quotas = largest_remainder(seqs.len(), ratios);

    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut buckets: Vec<Vec<InteractionSequence>> = vec![Vec::new(), Vec::new(), Vec::new()];
    let mut seqs: Vec<Option<InteractionSequence>> = seqs.into_iter().map(Some).collect();
    let mut cursor = 0usize;
    for (b, &quota) in quotas.iter().enumerate() {
        for _ in 0..quota {
            buckets[b].push(seqs[order[cursor]].take().expect("index visited once"));
            cursor += 1;
        }
    }
    let mut it = buckets.into_iter();
    Ok(DataSplit {
        train: it.next().unwrap(),
        validation: it.next().unwrap(),
        test: it.next().unwrap(),
        seed,
    })
}

fn largest_remainder(n: usize, ratios: (u32, u32, u32)) -> [usize; 3] {
    let total = (ratios.0 + ratios.1 + ratios.2) as f64;
    let shares = [ratios.0 as f64, ratios.1 as f64, ratios.2 as f64];
    let mut quotas = [0usize; 3];
    let mut remainders = [0f64; 3];
    let mut assigned = 0usize;
    for i in 0..3 {
        let exact = n as f64 * shares[i] / total;
        quotas[i] = exact.floor() as usize;
        remainders[i] = exact - exact.floor();
        assigned += quotas[i];
    }
    // Hand out leftovers by remainder, ties to the earlier bucket (train first).
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        remainders[b]
            .partial_cmp(&remainders[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut left = n - assigned;
    for &i in &order {
        if left == 0 {
            break;
        }
        quotas[i] += 1;
        left -= 1;
    }
    quotas
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(student: &str, n: usize) -> Vec<ResponseRecord> {
        (0..n)
            .map(|i| ResponseRecord {
                student_id: student.into(),
                question_id: format!("q{i}"),
                correctness: (i % 2) as u8,
                order_key: i as i64,
                concepts: vec![],
            })
            .collect()
    }

    #[test]
    fn chunks_of_fifty_with_tail() {
        let seqs = segment_sequences(&stream("u", 120), 50, 5);
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        assert_eq!(lens, vec![50, 50, 20]);
    }

    #[test]
    fn short_tail_is_dropped() {
        let seqs = segment_sequences(&stream("u", 53), 50, 5);
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        assert_eq!(lens, vec![50]);
    }

    #[test]
    fn below_minimum_student_emits_nothing() {
        assert!(segment_sequences(&stream("u", 4), 50, 5).is_empty());
    }

    #[test]
    fn concatenating_chunks_plus_dropped_tail_reconstructs_stream() {
        let records = stream("u", 117);
        let seqs = segment_sequences(&records, 50, 5);
        let mut rebuilt: Vec<ResponseRecord> = Vec::new();
        for s in &seqs {
            rebuilt.extend(s.responses.iter().cloned());
        }
        // 117 = 50 + 50 + 17: no tail dropped here, exact reconstruction.
        assert_eq!(rebuilt, records);

        let records = stream("u", 103);
        let seqs = segment_sequences(&records, 50, 5);
        let kept: usize = seqs.iter().map(|s| s.len()).sum();
        assert_eq!(kept, 100);
        for (i, s) in seqs.iter().enumerate() {
            assert_eq!(s.responses[..], records[i * 50..i * 50 + s.len()]);
        }
    }

    fn fake_seqs(n: usize) -> Vec<InteractionSequence> {
        (0..n)
            .map(|i| InteractionSequence {
                student_id: format!("u{i}"),
                chunk: 0,
                responses: stream(&format!("u{i}"), 5),
            })
            .collect()
    }

    #[test]
    fn ten_sequences_split_8_1_1() {
        let split = split_sequences(fake_seqs(10), (8, 1, 1), 0).unwrap();
        assert_eq!(
            (split.train.len(), split.validation.len(), split.test.len()),
            (8, 1, 1)
        );
    }

    #[test]
    fn same_seed_gives_identical_split() {
        let a = split_sequences(fake_seqs(100), (8, 1, 1), 7).unwrap();
        let b = split_sequences(fake_seqs(100), (8, 1, 1), 7).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        let c = split_sequences(fake_seqs(100), (8, 1, 1), 8).unwrap();
        assert_ne!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&c).unwrap()
        );
    }

    #[test]
    fn non_divisible_counts_follow_largest_remainder_ties_to_train() {
        // 101 sequences: exact shares (80.8, 10.1, 10.1) -> (81, 10, 10).
        let split = split_sequences(fake_seqs(101), (8, 1, 1), 3).unwrap();
        assert_eq!(
            (split.train.len(), split.validation.len(), split.test.len()),
            (81, 10, 10)
        );
        // 7 sequences: exact shares (5.6, 0.7, 0.7) -> floors (5,0,0), two
        // leftovers go to validation then test by the tie order.
        let split = split_sequences(fake_seqs(7), (8, 1, 1), 3).unwrap();
        assert_eq!(
            (split.train.len(), split.validation.len(), split.test.len()),
            (5, 1, 1)
        );
    }

    #[test]
    fn split_partitions_the_input() {
        let input = fake_seqs(37);
        let split = split_sequences(input.clone(), (8, 1, 1), 11).unwrap();
        assert_eq!(split.total(), 37);
        let mut seen: Vec<String> = split
            .train
            .iter()
            .chain(&split.validation)
            .chain(&split.test)
            .map(|s| s.sequence_id())
            .collect();
        seen.sort();
        let mut expect: Vec<String> = input.iter().map(|s| s.sequence_id()).collect();
        expect.sort();
        assert_eq!(seen, expect);
    }

    #[test]
    fn too_few_sequences_is_an_error() {
        assert!(split_sequences(fake_seqs(2), (8, 1, 1), 0).is_err());
    }
}
