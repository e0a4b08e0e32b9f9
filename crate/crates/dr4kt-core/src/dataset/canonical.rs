//! Canonical on-disk formats: sequence JSONL, Q-matrix triplet CSV and
//! statistics CSVs. All writers are deterministic so reruns produce
//! byte-identical files.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::qmatrix::{QMatrix, UNKNOWN_CONCEPT};
use super::stats::{Histogram, QuestionStats, HISTOGRAM_BINS};
use super::{InteractionSequence, ResponseRecord};

#[derive(Serialize, Deserialize)]
struct SequenceLine {
    student_id: String,
    chunk: usize,
    /// Ordered (question_id, correctness) pairs.
    responses: Vec<(String, u8)>,
}

/// One JSON record per line: student id, chunk index, ordered
/// (question_id, correctness) pairs.
pub fn write_sequences_jsonl(path: &Path, seqs: &[InteractionSequence]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for seq in seqs {
        let line = SequenceLine {
            student_id: seq.student_id.clone(),
            chunk: seq.chunk,
            responses: seq
                .responses
                .iter()
                .map(|r| (r.question_id.clone(), r.correctness))
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sequences_jsonl(path: &Path) -> Result<Vec<InteractionSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SequenceLine = serde_json::from_str(&line)?;
        let responses = parsed
            .responses
            .into_iter()
            .enumerate()
            .map(|(i, (question_id, correctness))| ResponseRecord {
                student_id: parsed.student_id.clone(),
                question_id,
                correctness,
                order_key: i as i64,
                concepts: vec![],
            })
            .collect();
        out.push(InteractionSequence {
            student_id: parsed.student_id,
            chunk: parsed.chunk,
            responses,
        });
    }
    Ok(out)
}

/// Sparse triplet CSV: question_id, concept_id, value (always 1).
pub fn write_qmatrix_csv(path: &Path, qm: &QMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["question_id", "concept_id", "value"])?;
    for (q, c, v) in qm.triplets() {
        w.write_record([q, c, &v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Rebuild a QMatrix from its triplet CSV. Index assignment (sorted ids,
/// reserved unknown column last) matches `build_q_matrix` exactly.
pub fn read_qmatrix_csv(path: &Path) -> Result<QMatrix> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Data(format!("cannot open {}: {e}", path.display())),
        _ => Error::Csv(e),
    })?;
    let mut triplets: Vec<(String, String)> = Vec::new();
    for row in reader.records() {
        let row = row?;
        let q = row
            .get(0)
            .ok_or_else(|| Error::Data("qmatrix csv: missing question column".into()))?;
        let c = row
            .get(1)
            .ok_or_else(|| Error::Data("qmatrix csv: missing concept column".into()))?;
        triplets.push((q.to_string(), c.to_string()));
    }
    if triplets.is_empty() {
        return Err(Error::Data(format!(
            "empty q-matrix file {}",
            path.display()
        )));
    }

    let questions: Vec<String> = triplets
        .iter()
        .map(|(q, _)| q.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut concepts: Vec<String> = triplets
        .iter()
        .filter(|(_, c)| c != UNKNOWN_CONCEPT)
        .map(|(_, c)| c.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    concepts.push(UNKNOWN_CONCEPT.to_string());

    let q_index: std::collections::BTreeMap<&str, usize> = questions
        .iter()
        .enumerate()
        .map(|(i, q)| (q.as_str(), i))
        .collect();
    let c_index: std::collections::BTreeMap<&str, usize> = concepts
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut row_sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); questions.len()];
    for (q, c) in &triplets {
        row_sets[q_index[q.as_str()]].insert(c_index[c.as_str()]);
    }
    let rows: Vec<Vec<usize>> = row_sets
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect();
    Ok(QMatrix::from_parts(questions, concepts, rows))
}

/// question_id, pass_rate, count rows in sorted question order.
pub fn write_pass_rates_csv(path: &Path, stats: &QuestionStats) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["question_id", "pass_rate", "count"])?;
    for (q, rate, n) in stats.iter() {
        w.write_record([q, &format!("{rate:.10}"), &n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_pass_rates_csv(path: &Path) -> Result<QuestionStats> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Data(format!("cannot open {}: {e}", path.display())),
        _ => Error::Csv(e),
    })?;
    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row?;
        let q = row
            .get(0)
            .ok_or_else(|| Error::Data("pass-rate csv: missing question column".into()))?;
        let rate: f64 = row
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Data("pass-rate csv: bad rate".into()))?;
        let count: u32 = row
            .get(2)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Data("pass-rate csv: bad count".into()))?;
        entries.push((q.to_string(), rate, count));
    }
    Ok(QuestionStats::from_entries(entries))
}

/// bin_lo, bin_hi, proportion, count rows (plus a filtered_out trailer row).
pub fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lo", "bin_hi", "proportion", "count"])?;
    for b in 0..HISTOGRAM_BINS {
        let lo = b as f64 * 0.2;
        let hi = lo + 0.2;
        w.write_record([
            format!("{lo:.1}"),
            format!("{hi:.1}"),
            format!("{:.10}", hist.proportions[b]),
            hist.counts[b].to_string(),
        ])?;
    }
    w.write_record([
        "filtered_out".to_string(),
        String::new(),
        String::new(),
        hist.filtered_out.to_string(),
    ])?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
