//! Prediction dumps and report emission. Every report is regenerable from
//! a run directory alone: `predictions.csv` plus the copied train-side
//! `pass_rates.csv` are sufficient inputs.
//!
//! Report schemas (all CSV, headers included, deterministic row order):
//! - `table2.csv`: `score,auc,acc` for the fused, backbone and tendency
//!   score columns.
//! - `table3.csv`: per-discrimination-level accuracy per score column.
//! - `figure2.csv`: discrimination histogram of the dumped responses,
//!   binned against train statistics.
//! - `figure4.csv`: `tau1,tau2,auc,acc` sweep grid (rows present when the
//!   run directory carries `sweep.csv`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{discrimination_bin, read_pass_rates_csv, QuestionStats, HISTOGRAM_BINS};
use crate::error::{Error, Result};
use crate::eval::{accuracy, auc, per_level_accuracy, LevelReport, ScoredResponse};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const PASS_RATES_FILE: &str = "pass_rates.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// One scored test response with every fusion ingredient.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sequence_id: String,
    pub step: usize,
    pub question_id: String,
    pub label: u8,
    /// Backbone score.
    pub kt_score: f64,
    /// Question tendency score used at serve time.
    pub tendency: f64,
    /// Predicted discrimination.
    pub delta_hat: f64,
    /// Fusion factor.
    pub zeta: f64,
    /// Served fused score.
    pub fused: f64,
}

/// Which score column of a dump to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreColumn {
    Fused,
    Kt,
    Tendency,
}

impl ScoreColumn {
    pub const ALL: [ScoreColumn; 3] = [ScoreColumn::Fused, ScoreColumn::Kt, ScoreColumn::Tendency];

    pub fn name(self) -> &'static str {
        match self {
            ScoreColumn::Fused => "fused",
            ScoreColumn::Kt => "kt",
            ScoreColumn::Tendency => "tendency",
        }
    }

    pub fn parse(s: &str) -> Result<ScoreColumn> {
        match s {
            "fused" => Ok(ScoreColumn::Fused),
            "kt" => Ok(ScoreColumn::Kt),
            "tendency" => Ok(ScoreColumn::Tendency),
            other => Err(Error::Config(format!(
                "unknown score column `{other}` (expected fused, kt or tendency)"
            ))),
        }
    }

    pub fn of(self, row: &PredictionRow) -> f64 {
        match self {
            ScoreColumn::Fused => row.fused,
            ScoreColumn::Kt => row.kt_score,
            ScoreColumn::Tendency => row.tendency,
        }
    }
}

pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "sequence_id",
        "step",
        "question_id",
        "label",
        "kt_score",
        "tendency",
        "delta_hat",
        "zeta",
        "fused",
    ])?;
    for r in rows {
        w.write_record([
            r.sequence_id.as_str(),
            &r.step.to_string(),
            r.question_id.as_str(),
            &r.label.to_string(),
            &format!("{:.10}", r.kt_score),
            &format!("{:.10}", r.tendency),
            &format!("{:.10}", r.delta_hat),
            &format!("{:.10}", r.zeta),
            &format!("{:.10}", r.fused),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Data(format!("cannot open {}: {e}", path.display())),
        _ => Error::Csv(e),
    })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::Data(format!("{}: short row", path.display())))
        };
        let num = |i: usize| -> Result<f64> {
            field(i)?
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad number in column {i}", path.display())))
        };
        rows.push(PredictionRow {
            sequence_id: field(0)?.to_string(),
            step: field(1)?
                .parse()
                .map_err(|_| Error::Data("bad step".into()))?,
            question_id: field(2)?.to_string(),
            label: match field(3)? {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::Data(format!("bad label `{other}`"))),
            },
            kt_score: num(4)?,
            tendency: num(5)?,
            delta_hat: num(6)?,
            zeta: num(7)?,
            fused: num(8)?,
        });
    }
    Ok(rows)
}

/// Read a run directory's prediction dump.
pub fn read_predictions(run_dir: &Path) -> Result<Vec<PredictionRow>> {
    read_predictions_csv(&run_dir.join(PREDICTIONS_FILE))
}

/// Read the train statistics copied into a run directory.
pub fn run_pass_rates(run_dir: &Path) -> Result<QuestionStats> {
    read_pass_rates_csv(&run_dir.join(PASS_RATES_FILE))
}

/// AUC/ACC of one score column over a dump.
pub fn column_metrics(rows: &[PredictionRow], column: ScoreColumn) -> Result<(f64, f64)> {
    let scores: Vec<f64> = rows.iter().map(|r| column.of(r)).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    Ok((auc(&scores, &labels)?, accuracy(&scores, &labels, 0.5)))
}

/// Per-discrimination-level accuracy of one score column.
pub fn column_level_report(
    rows: &[PredictionRow],
    stats: &QuestionStats,
    column: ScoreColumn,
    min_question_count: u32,
) -> LevelReport {
    let scored: Vec<ScoredResponse<'_>> = rows
        .iter()
        .map(|r| ScoredResponse {
            question_id: &r.question_id,
            label: r.label,
            score: column.of(r),
        })
        .collect();
    per_level_accuracy(&scored, stats, min_question_count, 0.5)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau1: f64,
    pub tau2: f64,
    pub auc: f64,
    pub acc: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tau1", "tau2", "auc", "acc"])?;
    for r in rows {
        w.write_record([
            format!("{:.2}", r.tau1),
            format!("{:.2}", r.tau2),
            format!("{:.6}", r.auc),
            format!("{:.6}", r.acc),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Data(format!("cannot open {}: {e}", path.display())),
        _ => Error::Csv(e),
    })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let num = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: bad sweep row", path.display())))
        };
        rows.push(SweepRow {
            tau1: num(0)?,
            tau2: num(1)?,
            auc: num(2)?,
            acc: num(3)?,
        });
    }
    Ok(rows)
}

/// Emit the four report CSVs into `<run_dir>/reports/`.
///
/// Requires `predictions.csv` and `pass_rates.csv` in the run directory;
/// `figure4.csv` gets rows only when `sweep.csv` is present.
pub fn emit_reports(run_dir: &Path) -> Result<()> {
    let predictions_path = run_dir.join(PREDICTIONS_FILE);
    if !predictions_path.exists() {
        return Err(Error::Data(format!(
            "{} not found; run an experiment (or eval) first",
            predictions_path.display()
        )));
    }
    let rows = read_predictions_csv(&predictions_path)?;
    if rows.is_empty() {
        return Err(Error::Data("prediction dump is empty".into()));
    }
    let stats = read_pass_rates_csv(&run_dir.join(PASS_RATES_FILE))?;

    let out = run_dir.join("reports");
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    // table2: overall metrics per score column.
    {
        let path = out.join("table2.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["score", "auc", "acc"])?;
        for column in ScoreColumn::ALL {
            let (auc_v, acc_v) = column_metrics(&rows, column)?;
            w.write_record([
                column.name(),
                &format!("{auc_v:.6}"),
                &format!("{acc_v:.6}"),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    // table3: per-level accuracy per score column.
    {
        let path = out.join("table3.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["score".to_string(), "overall_acc".to_string()];
        for b in 0..HISTOGRAM_BINS {
            header.push(format!("acc_bin{b}"));
        }
        for b in 0..HISTOGRAM_BINS {
            header.push(format!("count_bin{b}"));
        }
        header.push("below_threshold_count".to_string());
        header.push("below_threshold_acc".to_string());
        w.write_record(&header)?;
        for column in ScoreColumn::ALL {
            let report = column_level_report(&rows, &stats, column, 10);
            let mut record = vec![
                column.name().to_string(),
                format!("{:.6}", report.overall_acc),
            ];
            for b in 0..HISTOGRAM_BINS {
                record.push(match report.bin_acc[b] {
                    Some(a) => format!("{a:.6}"),
                    None => String::new(),
                });
            }
            for b in 0..HISTOGRAM_BINS {
                record.push(report.bin_counts[b].to_string());
            }
            record.push(report.below_threshold_count.to_string());
            record.push(match report.below_threshold_acc {
                Some(a) => format!("{a:.6}"),
                None => String::new(),
            });
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    // figure2: discrimination histogram of the dumped responses.
    {
        let path = out.join("figure2.csv");
        let mut counts = [0u64; HISTOGRAM_BINS];
        let mut filtered = 0u64;
        for r in &rows {
            match stats.discrimination(&r.question_id, r.label) {
                Some(delta) if stats.count(&r.question_id) >= 10 => {
                    counts[discrimination_bin(delta)] += 1;
                }
                _ => filtered += 1,
            }
        }
        let total: u64 = counts.iter().sum();
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["bin_lo", "bin_hi", "proportion", "count"])?;
        for (b, &c) in counts.iter().enumerate() {
            let lo = b as f64 * 0.2;
            w.write_record([
                format!("{lo:.1}"),
                format!("{:.1}", lo + 0.2),
                format!(
                    "{:.10}",
                    if total > 0 {
                        c as f64 / total as f64
                    } else {
                        0.0
                    }
                ),
                c.to_string(),
            ])?;
        }
        w.write_record([
            "filtered_out".to_string(),
            String::new(),
            String::new(),
            filtered.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    // figure4: temperature sweep grid, when present.
    {
        let path = out.join("figure4.csv");
        let sweep_path = run_dir.join(SWEEP_FILE);
        let rows = if sweep_path.exists() {
            read_sweep_csv(&sweep_path)?
        } else {
            Vec::new()
        };
        write_sweep_csv(&path, &rows)?;
    }

    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::write_pass_rates_csv;

    fn sample_rows() -> Vec<PredictionRow> {
        vec![
            PredictionRow {
                sequence_id: "u1#0".into(),
                step: 0,
                question_id: "qa".into(),
                label: 1,
                kt_score: 0.8,
                tendency: 0.9,
                delta_hat: 0.2,
                zeta: 0.4,
                fused: 0.86,
            },
            PredictionRow {
                sequence_id: "u1#0".into(),
                step: 1,
                question_id: "qb".into(),
                label: 0,
                kt_score: 0.3,
                tendency: 0.4,
                delta_hat: 0.6,
                zeta: 0.7,
                fused: 0.33,
            },
        ]
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(PREDICTIONS_FILE);
        let rows = sample_rows();
        write_predictions_csv(&path, &rows).unwrap();
        let back = read_predictions_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].sequence_id, "u1#0");
        assert!((back[1].fused - 0.33).abs() < 1e-9);
    }

    #[test]
    fn emit_reports_writes_four_csvs_with_expected_headers_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_predictions_csv(&dir.path().join(PREDICTIONS_FILE), &sample_rows()).unwrap();
        let stats = QuestionStats::from_entries(vec![
            ("qa".to_string(), 0.9, 20),
            ("qb".to_string(), 0.4, 15),
        ]);
        write_pass_rates_csv(&dir.path().join(PASS_RATES_FILE), &stats).unwrap();

        emit_reports(dir.path()).unwrap();
        let reports = dir.path().join("reports");
        let t2 = fs::read_to_string(reports.join("table2.csv")).unwrap();
        assert!(t2.starts_with("score,auc,acc"));
        let t3 = fs::read_to_string(reports.join("table3.csv")).unwrap();
        assert!(t3.starts_with("score,overall_acc,acc_bin0"));
        let f2 = fs::read_to_string(reports.join("figure2.csv")).unwrap();
        assert!(f2.starts_with("bin_lo,bin_hi,proportion,count"));
        let f4 = fs::read_to_string(reports.join("figure4.csv")).unwrap();
        assert!(f4.starts_with("tau1,tau2,auc,acc"));

        // Figure-2 proportions sum to 1 over binnable rows.
        let mut total = 0.0;
        for line in f2.lines().skip(1).take(HISTOGRAM_BINS) {
            total += line.split(',').nth(2).unwrap().parse::<f64>().unwrap();
        }
        assert!((total - 1.0).abs() < 1e-9);

        // Re-emitting produces byte-identical files.
        let before = fs::read(reports.join("table3.csv")).unwrap();
        emit_reports(dir.path()).unwrap();
        let after = fs::read(reports.join("table3.csv")).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn missing_predictions_is_an_actionable_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_reports(dir.path()).unwrap_err();
        assert!(err.to_string().contains("predictions.csv"));
    }
}
