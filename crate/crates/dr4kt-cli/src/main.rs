//! `dr4kt`: data preparation, imbalance analysis, two-stage training,
//! evaluation, temperature sweeps and report emission for
//! discrimination-rebalanced knowledge tracing.
//!
//! Exit codes: 0 success, 2 config errors, 3 data errors, 4 runtime
//! failures.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dr4kt_core::backbone::BackboneKind;
use dr4kt_core::dataset::{
    build_q_matrix, discrimination_histogram, load_interaction_log, question_pass_rate,
    segment_sequences, split_sequences, write_histogram_csv, CsvSchema, ResponseRecord,
};
use dr4kt_core::error::{Error, Result};
use dr4kt_core::report::{
    column_level_report, column_metrics, emit_reports, read_predictions, run_pass_rates,
    write_sweep_csv, ScoreColumn, SweepRow, SWEEP_FILE,
};
use dr4kt_core::synth::{generate, write_csv as write_synth_csv, SynthConfig};
use dr4kt_core::tendency::ConceptAggregation;
use dr4kt_core::training::{
    load_prepared, run_experiment, write_prepared, ExperimentConfig, ReweightMode,
};

#[derive(Parser)]
#[command(
    name = "dr4kt",
    version,
    about = "Discrimination-rebalanced knowledge tracing experiments"
)]
struct Cli {
    /// Root directory for relative output paths.
    #[arg(long, env = "DR4KT_RUN_ROOT", global = true)]
    run_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic interaction log calibrated to public corpus
    /// statistics (ASSISTments 2009-10 scale by default).
    Synth {
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Corpus scale: "full" (~113k responses) or "small" (fixture).
        #[arg(long, default_value = "full")]
        scale: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Override the number of students.
        #[arg(long)]
        students: Option<usize>,
        /// Override the number of questions.
        #[arg(long)]
        questions: Option<usize>,
        /// Override the number of concepts.
        #[arg(long)]
        concepts: Option<usize>,
    },
    /// Ingest a raw log: canonical split sequences, Q-matrix and train
    /// statistics.
    Prepare {
        /// Raw CSV/TSV interaction log.
        #[arg(long)]
        input: PathBuf,
        /// Column mapping: "assistments", "eedi", or a path to a schema
        /// JSON file.
        #[arg(long, default_value = "assistments")]
        schema: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        max_len: usize,
        #[arg(long, default_value_t = 5)]
        min_len: usize,
        /// Split proportions, e.g. "8,1,1".
        #[arg(long, default_value = "8,1,1")]
        ratios: String,
    },
    /// Discrimination histogram and imbalance report over the train split.
    Analyze {
        #[arg(long)]
        prepared: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        min_question_count: u32,
    },
    /// Stage I: pretrain and freeze the question tendency estimator.
    Pretrain {
        #[arg(long)]
        prepared: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Experiment config JSON (flags override file values).
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Stage II: train the backbone and discrimination predictor against a
    /// stage-I checkpoint, then score the test split.
    Train {
        #[arg(long)]
        prepared: PathBuf,
        /// Stage-I checkpoint directory (from `pretrain`, or a previous
        /// run's `stage1/`).
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write weights.csv: the loss weight assigned to every train
        /// response under the resolved config (audit export).
        #[arg(long, default_value_t = false)]
        export_weights: bool,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Metrics over an existing run's prediction dump.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Score column: fused, kt or tendency.
        #[arg(long, default_value = "fused")]
        score: String,
        #[arg(long, default_value_t = 10)]
        min_question_count: u32,
    },
    /// Grid both temperatures over {0.5, 1.0, 1.5, 2.0, 2.5} and emit a
    /// figure-style CSV.
    Sweep {
        #[arg(long)]
        prepared: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Emit the table/figure report CSVs from a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

/// Flags mirroring ExperimentConfig fields. Precedence:
/// flags > config file > built-in defaults; the resolved config is recorded
/// in the run manifest.
#[derive(Args, Default)]
struct ConfigOverrides {
    #[arg(long)]
    seed: Option<u64>,
    /// dkt or sakt.
    #[arg(long)]
    backbone: Option<String>,
    /// dr4kt, ipw, none or freq.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    tau1: Option<f64>,
    #[arg(long)]
    tau2: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    fusion: Option<bool>,
    #[arg(long)]
    d_q: Option<usize>,
    #[arg(long)]
    d_c: Option<usize>,
    #[arg(long)]
    d_h_tendency: Option<usize>,
    #[arg(long)]
    d_e: Option<usize>,
    #[arg(long)]
    d_m: Option<usize>,
    #[arg(long)]
    d_readout: Option<usize>,
    #[arg(long)]
    d_h_predictor: Option<usize>,
    #[arg(long)]
    lr_stage1: Option<f64>,
    #[arg(long)]
    lr_stage2: Option<f64>,
    #[arg(long)]
    batch_size_stage1: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    l2_tendency: Option<f64>,
    #[arg(long)]
    l2_predictor: Option<f64>,
    #[arg(long)]
    dropout_tendency: Option<f64>,
    #[arg(long)]
    dropout_predictor: Option<f64>,
    #[arg(long)]
    stage1_max: Option<usize>,
    #[arg(long)]
    stage2_max: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    include_first_step: Option<bool>,
    /// sum or mean.
    #[arg(long)]
    concept_aggregation: Option<String>,
    /// question or concept.
    #[arg(long)]
    tokens: Option<String>,
    #[arg(long)]
    min_question_count: Option<u32>,
    #[arg(long)]
    ipw_levels: Option<usize>,
}

impl ConfigOverrides {
    fn resolve(&self, config_path: Option<&Path>) -> Result<ExperimentConfig> {
        let mut cfg = match config_path {
            Some(path) => {
                let bytes = std::fs::read(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_slice(&bytes)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.backbone {
            cfg.backbone = match v.as_str() {
                "dkt" => BackboneKind::Dkt,
                "sakt" => BackboneKind::Sakt,
                "akt" => BackboneKind::Akt,
                "lpkt" => BackboneKind::Lpkt,
                other => return Err(Error::Config(format!("unknown backbone `{other}`"))),
            };
        }
        if let Some(v) = &self.mode {
            cfg.mode = match v.as_str() {
                "dr4kt" => ReweightMode::Dr4kt,
                "ipw" => ReweightMode::Ipw,
                "none" => ReweightMode::None,
                "freq" => ReweightMode::Freq,
                other => return Err(Error::Config(format!("unknown mode `{other}`"))),
            };
        }
        if let Some(v) = self.tau1 {
            cfg.tau1 = v;
        }
        if let Some(v) = self.tau2 {
            cfg.tau2 = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.fusion {
            cfg.fusion = v;
        }
        if let Some(v) = self.d_q {
            cfg.dims.d_q = v;
        }
        if let Some(v) = self.d_c {
            cfg.dims.d_c = v;
        }
        if let Some(v) = self.d_h_tendency {
            cfg.dims.d_h_tendency = v;
        }
        if let Some(v) = self.d_e {
            cfg.dims.d_e = v;
        }
        if let Some(v) = self.d_m {
            cfg.dims.d_m = v;
        }
        if let Some(v) = self.d_readout {
            cfg.dims.d_readout = v;
        }
        if let Some(v) = self.d_h_predictor {
            cfg.dims.d_h_predictor = v;
        }
        if let Some(v) = self.lr_stage1 {
            cfg.optimizer.lr_stage1 = v;
        }
        if let Some(v) = self.lr_stage2 {
            cfg.optimizer.lr_stage2 = v;
        }
        if let Some(v) = self.batch_size_stage1 {
            cfg.optimizer.batch_size_stage1 = v;
        }
        if let Some(v) = self.batch_size {
            cfg.optimizer.batch_size = v;
        }
        if let Some(v) = self.clip_norm {
            cfg.optimizer.clip_norm = v;
        }
        if let Some(v) = self.l2_tendency {
            cfg.optimizer.l2_tendency = v;
        }
        if let Some(v) = self.l2_predictor {
            cfg.optimizer.l2_predictor = v;
        }
        if let Some(v) = self.dropout_tendency {
            cfg.optimizer.dropout_tendency = v;
        }
        if let Some(v) = self.dropout_predictor {
            cfg.optimizer.dropout_predictor = v;
        }
        if let Some(v) = self.stage1_max {
            cfg.epochs.stage1_max = v;
        }
        if let Some(v) = self.stage2_max {
            cfg.epochs.stage2_max = v;
        }
        if let Some(v) = self.patience {
            cfg.epochs.patience = v;
        }
        if let Some(v) = self.include_first_step {
            cfg.include_first_step = v;
        }
        if let Some(v) = &self.concept_aggregation {
            cfg.concept_aggregation = match v.as_str() {
                "sum" => ConceptAggregation::Sum,
                "mean" => ConceptAggregation::Mean,
                other => return Err(Error::Config(format!("unknown aggregation `{other}`"))),
            };
        }
        if let Some(v) = &self.tokens {
            cfg.tokens = match v.as_str() {
                "question" => dr4kt_core::backbone::TokenGranularity::Question,
                "concept" => dr4kt_core::backbone::TokenGranularity::Concept,
                other => {
                    return Err(Error::Config(format!(
                        "unknown token granularity `{other}`"
                    )))
                }
            };
        }
        if let Some(v) = self.min_question_count {
            cfg.min_question_count = v;
        }
        if let Some(v) = self.ipw_levels {
            cfg.ipw_levels = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn resolve_out(run_root: Option<&Path>, out: &Path) -> PathBuf {
    match run_root {
        Some(root) if out.is_relative() => root.join(out),
        _ => out.to_path_buf(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn load_schema(spec: &str) -> Result<CsvSchema> {
    if let Some(schema) = CsvSchema::by_name(spec) {
        return Ok(schema);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::Config(format!(
            "`{spec}` is neither a schema preset (assistments, eedi) nor a schema JSON file"
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("{spec}: {e}")))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{spec}: {e}")))
}

fn parse_ratios(spec: &str) -> Result<(u32, u32, u32)> {
    let parts: Vec<u32> = spec
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad ratios `{spec}`; expected e.g. 8,1,1")))?;
    if parts.len() != 3 || parts.iter().sum::<u32>() == 0 {
        return Err(Error::Config(format!(
            "bad ratios `{spec}`; expected three positive parts"
        )));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let argv: Vec<String> = std::env::args().collect();
    let root = cli.run_root.as_deref();
    match cli.command {
        Command::Synth {
            out,
            scale,
            seed,
            students,
            questions,
            concepts,
        } => {
            let mut cfg = match scale.as_str() {
                "full" => SynthConfig::full(seed),
                "small" => SynthConfig::small(seed),
                other => {
                    return Err(Error::Config(format!(
                        "unknown scale `{other}` (expected full or small)"
                    )))
                }
            };
            if let Some(v) = students {
                cfg.students = v;
            }
            if let Some(v) = questions {
                cfg.questions = v;
            }
            if let Some(v) = concepts {
                cfg.concepts = v;
            }
            let out = resolve_out(root, &out);
            ensure_parent(&out)?;
            let rows = generate(&cfg);
            write_synth_csv(&out, &rows)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(())
        }

        Command::Prepare {
            input,
            schema,
            out,
            seed,
            max_len,
            min_len,
            ratios,
        } => {
            let out = resolve_out(root, &out);
            let schema = load_schema(&schema)?;
            let ratios = parse_ratios(&ratios)?;
            let loaded = load_interaction_log(&input, &schema)?;
            let qmatrix = build_q_matrix(&loaded.records);
            let seqs = segment_sequences(&loaded.records, max_len, min_len);
            let split = split_sequences(seqs, ratios, seed)?;
            let stats = question_pass_rate(&split.train);
            let train_responses: Vec<&ResponseRecord> = split
                .train
                .iter()
                .flat_map(|s| s.responses.iter())
                .collect();
            let histogram = discrimination_histogram(&train_responses, &stats, 10)?;
            write_prepared(&out, &split, &qmatrix, &stats, &histogram)?;
            manifest::write(&out, &argv, std::slice::from_ref(&input), Some(seed), None)?;
            println!(
                "prepared {} ({} rejected, {} duplicate rows): {} train / {} validation / {} test sequences, {} questions, {} concepts",
                out.display(),
                loaded.rejected,
                loaded.duplicates,
                split.train.len(),
                split.validation.len(),
                split.test.len(),
                qmatrix.num_questions(),
                qmatrix.num_concepts(),
            );
            Ok(())
        }

        Command::Analyze {
            prepared,
            out,
            min_question_count,
        } => {
            let out = resolve_out(root, &out);
            let data = load_prepared(&prepared)?;
            let train_responses: Vec<&ResponseRecord> =
                data.train.iter().flat_map(|s| s.responses.iter()).collect();
            let histogram =
                discrimination_histogram(&train_responses, &data.stats, min_question_count)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_histogram_csv(&out.join("histogram.csv"), &histogram)?;
            let imbalance = serde_json::json!({
                "total_responses": train_responses.len(),
                "binned_responses": histogram.total_kept(),
                "filtered_out": histogram.filtered_out,
                "proportions": histogram.proportions,
                "counts": histogram.counts,
                "low_discrimination_share": histogram.low_share,
            });
            std::fs::write(
                out.join("imbalance.json"),
                serde_json::to_vec_pretty(&imbalance)?,
            )
            .map_err(|e| Error::io(out.join("imbalance.json"), e))?;
            manifest::write(&out, &argv, std::slice::from_ref(&prepared), None, None)?;
            println!(
                "low-discrimination share (delta < 0.5): {:.4} over {} binned responses ({} filtered)",
                histogram.low_share,
                histogram.total_kept(),
                histogram.filtered_out
            );
            Ok(())
        }

        Command::Pretrain {
            prepared,
            out,
            config,
            overrides,
        } => {
            let out = resolve_out(root, &out);
            let cfg = overrides.resolve(config.as_deref())?;
            let data = load_prepared(&prepared)?;
            let (estimator, losses) = dr4kt_core::training::experiment::run_stage1(&cfg, &data)?;
            dr4kt_core::checkpoint::save_tendency(&out, &estimator, cfg.seed, &data.qmatrix)?;
            std::fs::write(
                out.join("pretrain_losses.json"),
                serde_json::to_vec_pretty(&losses)?,
            )
            .map_err(|e| Error::io(out.join("pretrain_losses.json"), e))?;
            manifest::write(
                &out,
                &argv,
                std::slice::from_ref(&prepared),
                Some(cfg.seed),
                Some(&cfg),
            )?;
            println!(
                "pretrained tendency estimator over {} epochs (final loss {:.6}) -> {}",
                losses.len(),
                losses.last().unwrap_or(&f64::NAN),
                out.display()
            );
            Ok(())
        }

        Command::Train {
            prepared,
            stage1,
            out,
            config,
            export_weights,
            overrides,
        } => {
            let out = resolve_out(root, &out);
            let cfg = overrides.resolve(config.as_deref())?;
            if !stage1.join("manifest.json").exists() {
                return Err(Error::Data(format!(
                    "no stage-I checkpoint at {}; run `dr4kt pretrain` first",
                    stage1.display()
                )));
            }
            let data = load_prepared(&prepared)?;
            let artifacts = run_experiment(&cfg, &data, &out, Some(&stage1))?;
            if export_weights {
                write_weights_csv(&out, &artifacts, &data, &cfg)?;
            }
            manifest::write(
                &out,
                &argv,
                &[prepared.clone(), stage1.clone()],
                Some(cfg.seed),
                Some(&cfg),
            )?;
            let best = artifacts.train_report.best();
            println!(
                "trained {} ({} mode): best epoch {} val AUC {:.4}; test[{}] AUC {:.4} ACC {:.4}",
                cfg.backbone,
                cfg.mode,
                artifacts.train_report.best_epoch,
                best.val_auc,
                artifacts.test_report.served,
                if cfg.fusion {
                    artifacts.test_report.fused.auc
                } else {
                    artifacts.test_report.kt.auc
                },
                if cfg.fusion {
                    artifacts.test_report.fused.acc
                } else {
                    artifacts.test_report.kt.acc
                },
            );
            Ok(())
        }

        Command::Eval {
            run,
            score,
            min_question_count,
        } => {
            let column = ScoreColumn::parse(&score)?;
            let rows = read_predictions(&run)?;
            let stats = run_pass_rates(&run)?;
            let (auc, acc) = column_metrics(&rows, column)?;
            let levels = column_level_report(&rows, &stats, column, min_question_count);
            let payload = serde_json::json!({
                "score": column.name(),
                "auc": auc,
                "acc": acc,
                "levels": levels,
            });
            println!("{}", serde_json::to_string_pretty(&payload)?);
            Ok(())
        }

        Command::Sweep {
            prepared,
            stage1,
            out,
            config,
            overrides,
        } => {
            let out = resolve_out(root, &out);
            let base = overrides.resolve(config.as_deref())?;
            if !stage1.join("manifest.json").exists() {
                return Err(Error::Data(format!(
                    "no stage-I checkpoint at {}; run `dr4kt pretrain` first",
                    stage1.display()
                )));
            }
            let data = load_prepared(&prepared)?;
            let grid: Vec<f64> = vec![0.5, 1.0, 1.5, 2.0, 2.5];
            let points: Vec<(f64, f64)> = grid
                .iter()
                .flat_map(|&t1| grid.iter().map(move |&t2| (t1, t2)))
                .collect();
            let results: Vec<Result<SweepRow>> =
                dr4kt_core::par::map_collect(&points, |&(tau1, tau2)| {
                    let mut cfg = base.clone();
                    cfg.tau1 = tau1;
                    cfg.tau2 = tau2;
                    let run_dir = out.join(format!("t1_{tau1:.1}_t2_{tau2:.1}"));
                    let artifacts = run_experiment(&cfg, &data, &run_dir, Some(&stage1))?;
                    manifest::write(
                        &run_dir,
                        &argv,
                        std::slice::from_ref(&stage1),
                        Some(cfg.seed),
                        Some(&cfg),
                    )?;
                    let (auc, acc) = if cfg.fusion {
                        (
                            artifacts.test_report.fused.auc,
                            artifacts.test_report.fused.acc,
                        )
                    } else {
                        (artifacts.test_report.kt.auc, artifacts.test_report.kt.acc)
                    };
                    Ok(SweepRow {
                        tau1,
                        tau2,
                        auc,
                        acc,
                    })
                });
            let mut rows = Vec::with_capacity(results.len());
            for r in results {
                rows.push(r?);
            }
            write_sweep_csv(&out.join(SWEEP_FILE), &rows)?;
            write_sweep_csv(&out.join("figure4.csv"), &rows)?;
            manifest::write(
                &out,
                &argv,
                &[prepared.clone(), stage1.clone()],
                Some(base.seed),
                Some(&base),
            )?;
            let best = rows
                .iter()
                .max_by(|a, b| a.auc.partial_cmp(&b.auc).expect("finite auc"))
                .expect("non-empty grid");
            println!(
                "swept {} grid points; best AUC {:.4} at tau1 {:.1}, tau2 {:.1}",
                rows.len(),
                best.auc,
                best.tau1,
                best.tau2
            );
            Ok(())
        }

        Command::Report { run } => {
            emit_reports(&run)?;
            println!("wrote reports under {}", run.join("reports").display());
            Ok(())
        }
    }
}

/// Audit export: the loss weight assigned to every train response under the
/// resolved config, with the discrimination score it came from.
fn write_weights_csv(
    out: &Path,
    artifacts: &dr4kt_core::training::ExperimentArtifacts,
    data: &dr4kt_core::training::PreparedData,
    cfg: &ExperimentConfig,
) -> Result<()> {
    use dr4kt_core::training::stage2::ScoringContext;
    let ctx = ScoringContext::build(&artifacts.tendency, &data.stats, &data.qmatrix, cfg)?;
    let train_encoded = dr4kt_core::training::encode_sequences(&data.train, &data.qmatrix);
    let rows = dr4kt_core::training::train_weight_rows(&ctx, &train_encoded, &data.qmatrix);
    let path = out.join("weights.csv");
    let mut w = csv::Writer::from_path(&path).map_err(dr4kt_core::Error::from)?;
    w.write_record([
        "sequence_id",
        "step",
        "question_id",
        "label",
        "delta",
        "weight",
    ])
    .map_err(dr4kt_core::Error::from)?;
    for (seq_id, step, qid, label, delta, weight) in rows {
        w.write_record([
            seq_id.as_str(),
            &step.to_string(),
            qid.as_str(),
            &label.to_string(),
            &format!("{delta:.10}"),
            &format!("{weight:.10}"),
        ])
        .map_err(dr4kt_core::Error::from)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}
