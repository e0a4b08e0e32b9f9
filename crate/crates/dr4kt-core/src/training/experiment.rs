//! End-to-end experiment runner: prepared-directory IO, stage I, stage II,
//! test scoring and artifact persistence. One run writes one immutable
//! output directory:
//!
//! ```text
//! <out>/
//!   config.json             resolved ExperimentConfig
//!   stage1/                 tendency checkpoint (+ pretrain_losses.json)
//!   stage2/backbone/        backbone checkpoint
//!   stage2/predictor/       discrimination-predictor checkpoint
//!   predictions.csv         per-response test dump
//!   pass_rates.csv          train statistics (copied for report regeneration)
//!   report.json             train/test metrics
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneKind, BackboneModel, DktModel, SaktModel};
use crate::checkpoint;
use crate::dataset::{
    read_pass_rates_csv, read_qmatrix_csv, read_sequences_jsonl, write_histogram_csv,
    write_pass_rates_csv, write_qmatrix_csv, write_sequences_jsonl, DataSplit, Histogram,
    InteractionSequence, QMatrix, QuestionStats,
};
use crate::error::{Error, Result};
use crate::eval::LevelReport;
use crate::fusion::DiscriminationPredictor;
use crate::report::{
    column_level_report, column_metrics, write_predictions_csv, PredictionRow, ScoreColumn,
    PASS_RATES_FILE, PREDICTIONS_FILE,
};
use crate::tendency::{pretrain_tendency, PretrainItem, TendencyEstimator, TendencyTrainConfig};
use crate::training::stage2::{score_sequence, train_stage2, ScoringContext, Stage2Data};
use crate::training::{encode_sequences, ExperimentConfig, TrainReport};

pub const TRAIN_SEQUENCES_FILE: &str = "sequences_train.jsonl";
pub const VALIDATION_SEQUENCES_FILE: &str = "sequences_validation.jsonl";
pub const TEST_SEQUENCES_FILE: &str = "sequences_test.jsonl";
pub const QMATRIX_FILE: &str = "qmatrix.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";

/// A prepared corpus: split sequences, the Q-matrix and train statistics.
pub struct PreparedData {
    pub train: Vec<InteractionSequence>,
    pub validation: Vec<InteractionSequence>,
    pub test: Vec<InteractionSequence>,
    pub qmatrix: QMatrix,
    pub stats: QuestionStats,
}

/// Write the canonical prepared-directory files.
pub fn write_prepared(
    dir: &Path,
    split: &DataSplit,
    qmatrix: &QMatrix,
    stats: &QuestionStats,
    histogram: &Histogram,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_sequences_jsonl(&dir.join(TRAIN_SEQUENCES_FILE), &split.train)?;
    write_sequences_jsonl(&dir.join(VALIDATION_SEQUENCES_FILE), &split.validation)?;
    write_sequences_jsonl(&dir.join(TEST_SEQUENCES_FILE), &split.test)?;
    write_qmatrix_csv(&dir.join(QMATRIX_FILE), qmatrix)?;
    write_pass_rates_csv(&dir.join(PASS_RATES_FILE), stats)?;
    write_histogram_csv(&dir.join(HISTOGRAM_FILE), histogram)?;
    Ok(())
}

pub fn load_prepared(dir: &Path) -> Result<PreparedData> {
    Ok(PreparedData {
        train: read_sequences_jsonl(&dir.join(TRAIN_SEQUENCES_FILE))?,
        validation: read_sequences_jsonl(&dir.join(VALIDATION_SEQUENCES_FILE))?,
        test: read_sequences_jsonl(&dir.join(TEST_SEQUENCES_FILE))?,
        qmatrix: read_qmatrix_csv(&dir.join(QMATRIX_FILE))?,
        stats: read_pass_rates_csv(&dir.join(PASS_RATES_FILE))?,
    })
}

/// Stage-I training examples: one per train question, targeting its train
/// pass rate.
pub fn stage1_items(prepared: &PreparedData) -> Vec<PretrainItem> {
    let mut items = Vec::new();
    for q in 0..prepared.qmatrix.num_questions() {
        if let Some(rate) = prepared.stats.pass_rate(prepared.qmatrix.question_id(q)) {
            items.push(PretrainItem {
                question: q,
                concepts: prepared.qmatrix.row(q).to_vec(),
                target: rate,
            });
        }
    }
    items
}

/// Pretrain and freeze the tendency estimator.
pub fn run_stage1(
    config: &ExperimentConfig,
    prepared: &PreparedData,
) -> Result<(TendencyEstimator, Vec<f64>)> {
    config.validate()?;
    let mut estimator = TendencyEstimator::new(
        prepared.qmatrix.num_questions(),
        prepared.qmatrix.num_concepts(),
        config.dims.d_q,
        config.dims.d_c,
        config.dims.d_h_tendency,
        config.concept_aggregation,
        config.seed,
    );
    let items = stage1_items(prepared);
    let stage1_config = TendencyTrainConfig {
        learning_rate: config.optimizer.lr_stage1,
        max_epochs: config.epochs.stage1_max,
        batch_size: config.optimizer.batch_size_stage1,
        dropout: config.optimizer.dropout_tendency,
        l2: config.optimizer.l2_tendency,
        patience: config.epochs.patience,
        seed: config.seed,
    };
    let losses = pretrain_tendency(&mut estimator, &items, &stage1_config)?;
    Ok((estimator, losses))
}

fn build_backbone(
    config: &ExperimentConfig,
    qmatrix: &QMatrix,
    max_len: usize,
) -> Result<BackboneModel> {
    let mut model = match config.backbone {
        BackboneKind::Dkt => BackboneModel::Dkt(DktModel::new(
            qmatrix.num_questions(),
            qmatrix.num_concepts(),
            config.dims.d_e,
            config.dims.d_m,
            config.dims.d_readout,
            config.seed,
        )),
        BackboneKind::Sakt => BackboneModel::Sakt(SaktModel::new(
            qmatrix.num_questions(),
            qmatrix.num_concepts(),
            config.dims.d_m,
            max_len,
            config.dims.d_readout,
            config.seed,
        )),
        other => {
            return Err(Error::Config(format!(
                "backbone `{other}` is a declared extension point and is not implemented"
            )))
        }
    };
    match &mut model {
        BackboneModel::Dkt(m) => m.emb.tokens = config.tokens,
        BackboneModel::Sakt(m) => m.emb.tokens = config.tokens,
    }
    Ok(model)
}

/// Metrics of one score column over the test dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnReport {
    pub auc: f64,
    pub acc: f64,
    pub levels: LevelReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestReport {
    /// Which column is served ("fused" when fusion is on, "kt" otherwise).
    pub served: String,
    pub fused: ColumnReport,
    pub kt: ColumnReport,
    pub tendency: ColumnReport,
    pub responses: usize,
}

#[derive(Serialize, Deserialize)]
struct RunReport {
    train: TrainReport,
    test: TestReport,
}

pub struct ExperimentArtifacts {
    pub tendency: TendencyEstimator,
    pub backbone: BackboneModel,
    pub predictor: DiscriminationPredictor,
    pub train_report: TrainReport,
    pub test_report: TestReport,
    pub predictions: Vec<PredictionRow>,
}

/// Score a sequence set into prediction rows (id-space sequences zipped with
/// their encodings).
pub fn score_to_rows(
    backbone: &BackboneModel,
    predictor: &DiscriminationPredictor,
    ctx: &ScoringContext,
    raw: &[InteractionSequence],
    qmatrix: &QMatrix,
) -> Vec<PredictionRow> {
    let encoded = encode_sequences(raw, qmatrix);
    let per_seq = crate::par::map_collect(&encoded, |seq| {
        score_sequence(backbone, predictor, ctx, seq)
    });
    let mut rows = Vec::new();
    for (seq, scores) in raw.iter().zip(per_seq) {
        for (step, (r, s)) in seq.responses.iter().zip(scores).enumerate() {
            rows.push(PredictionRow {
                sequence_id: seq.sequence_id(),
                step,
                question_id: r.question_id.clone(),
                label: r.correctness,
                kt_score: s.kt,
                tendency: s.tendency,
                delta_hat: s.delta_hat,
                zeta: s.zeta,
                fused: s.fused,
            });
        }
    }
    rows
}

pub fn test_report(
    rows: &[PredictionRow],
    stats: &QuestionStats,
    config: &ExperimentConfig,
) -> Result<TestReport> {
    let column_report = |column: ScoreColumn| -> Result<ColumnReport> {
        let (auc, acc) = column_metrics(rows, column)?;
        Ok(ColumnReport {
            auc,
            acc,
            levels: column_level_report(rows, stats, column, config.min_question_count),
        })
    };
    Ok(TestReport {
        served: if config.fusion { "fused" } else { "kt" }.to_string(),
        fused: column_report(ScoreColumn::Fused)?,
        kt: column_report(ScoreColumn::Kt)?,
        tendency: column_report(ScoreColumn::Tendency)?,
        responses: rows.len(),
    })
}

/// Run stage I (or load it from `stage1_from`), stage II, and test scoring;
/// persist every artifact under `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    prepared: &PreparedData,
    out_dir: &Path,
    stage1_from: Option<&Path>,
) -> Result<ExperimentArtifacts> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    fs::write(
        out_dir.join(CONFIG_FILE),
        serde_json::to_vec_pretty(config)?,
    )
    .map_err(|e| Error::io(out_dir.join(CONFIG_FILE), e))?;

    // Stage I: pretrain here or reuse a checkpoint; either way the copy in
    // this run directory is reloaded from disk so downstream stages consume
    // exactly the persisted artifact.
    let stage1_dir = out_dir.join("stage1");
    match stage1_from {
        Some(dir) => {
            let estimator = checkpoint::load_tendency(dir, &prepared.qmatrix)?;
            if !estimator.is_frozen() {
                return Err(Error::Frozen);
            }
            checkpoint::save_tendency(&stage1_dir, &estimator, config.seed, &prepared.qmatrix)?;
        }
        None => {
            let (estimator, losses) = run_stage1(config, prepared)?;
            checkpoint::save_tendency(&stage1_dir, &estimator, config.seed, &prepared.qmatrix)?;
            fs::write(
                stage1_dir.join("pretrain_losses.json"),
                serde_json::to_vec_pretty(&losses)?,
            )
            .map_err(|e| Error::io(stage1_dir.join("pretrain_losses.json"), e))?;
        }
    }
    let tendency = checkpoint::load_tendency(&stage1_dir, &prepared.qmatrix)?;

    // Stage II.
    let max_len = prepared
        .train
        .iter()
        .chain(&prepared.validation)
        .chain(&prepared.test)
        .map(InteractionSequence::len)
        .max()
        .unwrap_or(1);
    let backbone = build_backbone(config, &prepared.qmatrix, max_len)?;
    let predictor = DiscriminationPredictor::new(
        config.dims.d_m,
        config.dims.d_q,
        config.dims.d_c,
        config.dims.d_h_predictor,
        config.seed,
    );
    let train_encoded = encode_sequences(&prepared.train, &prepared.qmatrix);
    let val_encoded = encode_sequences(&prepared.validation, &prepared.qmatrix);
    let output = train_stage2(
        backbone,
        predictor,
        &tendency,
        &prepared.stats,
        &prepared.qmatrix,
        Stage2Data {
            train: &train_encoded,
            validation: &val_encoded,
        },
        config,
    )?;

    checkpoint::save_backbone(
        &out_dir.join("stage2").join("backbone"),
        &output.backbone,
        config.seed,
        &prepared.qmatrix,
    )?;
    checkpoint::save_predictor(
        &out_dir.join("stage2").join("predictor"),
        &output.predictor,
        config.dims.d_q,
        config.dims.d_c,
        config.seed,
        &prepared.qmatrix,
    )?;

    // Test scoring and artifacts.
    let ctx = ScoringContext::build(&tendency, &prepared.stats, &prepared.qmatrix, config)?;
    let predictions = score_to_rows(
        &output.backbone,
        &output.predictor,
        &ctx,
        &prepared.test,
        &prepared.qmatrix,
    );
    write_predictions_csv(&out_dir.join(PREDICTIONS_FILE), &predictions)?;
    write_pass_rates_csv(&out_dir.join(PASS_RATES_FILE), &prepared.stats)?;
    let test = test_report(&predictions, &prepared.stats, config)?;
    fs::write(
        out_dir.join(REPORT_FILE),
        serde_json::to_vec_pretty(&RunReport {
            train: output.report.clone(),
            test: test.clone(),
        })?,
    )
    .map_err(|e| Error::io(out_dir.join(REPORT_FILE), e))?;

    Ok(ExperimentArtifacts {
        tendency,
        backbone: output.backbone,
        predictor: output.predictor,
        train_report: output.report,
        test_report: test,
        predictions,
    })
}
