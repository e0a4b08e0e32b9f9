//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (run with `--nocapture` to see them).
//!
//! The corpus-scale criteria run against the bundled synthetic corpus
//! calibrated to the public ASSISTments 2009-10 statistics. Point
//! `DR4KT_ASSISTMENTS_CSV` at the real combined-dataset export to run them
//! against the original data instead (schema preset: assistments).
//!
//! Heavy state (the prepared corpus, stage-I checkpoint, trained runs) is
//! computed once per process and shared across criteria.

use std::path::PathBuf;
use std::sync::OnceLock;

use dr4kt_core::backbone::{
    backbone_gradient_check, BackboneKind, BackboneModel, DktModel, EncodedSequence, EncodedStep,
    SaktModel, TokenGranularity,
};
use dr4kt_core::dataset::{
    build_q_matrix, discrimination_histogram, empirical_discrimination, question_pass_rate,
    segment_sequences, split_sequences, CsvSchema, Histogram, ResponseRecord,
};
use dr4kt_core::error::Error;
use dr4kt_core::eval::{accuracy, auc};
use dr4kt_core::fusion::{
    fuse_scores, fusion_factor, predictor_gradient_check, DiscriminationPredictor,
    PredictorCheckItem,
};
use dr4kt_core::nn::{clamp_prob, global_norm, Adam, Mat, ParamTensors};
use dr4kt_core::rebalance::{
    discrimination_score, response_weight, reweighted_bce, WeightedLossBatch,
};
use dr4kt_core::synth::{generate, SynthConfig};
use dr4kt_core::tendency::{tendency_gradient_check, PretrainItem, TendencyEstimator};
use dr4kt_core::training::{
    encode_sequences, run_experiment, ExperimentConfig, PreparedData, ReweightMode, TestReport,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reweighting temperature used by the corpus-scale runs; inside the range
/// the temperature sweep reports as optimal.
const ACCEPT_TAU1: f64 = 1.5;
const ACCEPT_TAU2: f64 = 1.5;
const ACCEPT_SEED: u64 = 1;
const STAGE2_EPOCHS: usize = 40;

fn check(name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {name}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{name}: {detail}");
}

// ---------------------------------------------------------------------
// Shared corpus and runs.
// ---------------------------------------------------------------------

struct Corpus {
    prepared: PreparedData,
    source: &'static str,
    histogram: Histogram,
}

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let (records, source) = match std::env::var("DR4KT_ASSISTMENTS_CSV") {
            Ok(path) => {
                let schema = CsvSchema::assistments();
                let outcome = dr4kt_core::dataset::load_interaction_log(
                    PathBuf::from(&path).as_path(),
                    &schema,
                )
                .expect("load the supplied assistments csv");
                (outcome.records, "assistments csv (env override)")
            }
            Err(_) => {
                let rows = generate(&SynthConfig::full(ACCEPT_SEED));
                let records: Vec<ResponseRecord> = rows
                    .iter()
                    .map(|r| ResponseRecord {
                        student_id: r.user_id.clone(),
                        question_id: r.problem_id.clone(),
                        correctness: r.correct,
                        order_key: r.order_id as i64,
                        concepts: r.skill_id.split('_').map(str::to_string).collect(),
                    })
                    .collect();
                (records, "bundled synthetic corpus (assistments-calibrated)")
            }
        };
        let qmatrix = build_q_matrix(&records);
        let split =
            split_sequences(segment_sequences(&records, 50, 5), (8, 1, 1), ACCEPT_SEED).unwrap();
        let stats = question_pass_rate(&split.train);
        let train_responses: Vec<&ResponseRecord> = split
            .train
            .iter()
            .flat_map(|s| s.responses.iter())
            .collect();
        let histogram = discrimination_histogram(&train_responses, &stats, 10).unwrap();
        println!("acceptance corpus: {source}");
        Corpus {
            prepared: PreparedData {
                train: split.train,
                validation: split.validation,
                test: split.test,
                qmatrix,
                stats,
            },
            source,
            histogram,
        }
    })
}

fn accept_config(
    backbone: BackboneKind,
    mode: ReweightMode,
    lambda: f64,
    fusion: bool,
) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = ACCEPT_SEED;
    cfg.backbone = backbone;
    cfg.mode = mode;
    cfg.tau1 = ACCEPT_TAU1;
    cfg.tau2 = ACCEPT_TAU2;
    cfg.lambda = lambda;
    cfg.fusion = fusion;
    cfg.tokens = TokenGranularity::Concept;
    cfg.epochs.stage2_max = STAGE2_EPOCHS;
    cfg
}

struct RunDirs {
    root: tempfile::TempDir,
    stage1: OnceLock<PathBuf>,
}

fn run_dirs() -> &'static RunDirs {
    static DIRS: OnceLock<RunDirs> = OnceLock::new();
    DIRS.get_or_init(|| RunDirs {
        root: tempfile::TempDir::with_prefix("dr4kt-acceptance-").expect("tempdir"),
        stage1: OnceLock::new(),
    })
}

/// Stage-I checkpoint shared by every corpus-scale run.
fn stage1_dir() -> &'static PathBuf {
    let dirs = run_dirs();
    dirs.stage1.get_or_init(|| {
        let corpus = corpus();
        let cfg = accept_config(BackboneKind::Dkt, ReweightMode::Dr4kt, 1.0, true);
        let (estimator, _) =
            dr4kt_core::training::experiment::run_stage1(&cfg, &corpus.prepared).unwrap();
        let dir = dirs.root.path().join("stage1");
        dr4kt_core::checkpoint::save_tendency(&dir, &estimator, cfg.seed, &corpus.prepared.qmatrix)
            .unwrap();
        dir
    })
}

fn corpus_run(name: &str, cfg: &ExperimentConfig) -> TestReport {
    let corpus = corpus();
    let out = run_dirs().root.path().join(name);
    let artifacts = run_experiment(cfg, &corpus.prepared, &out, Some(stage1_dir())).unwrap();
    artifacts.test_report
}

macro_rules! shared_run {
    ($fn_name:ident, $name:literal, $cfg:expr) => {
        fn $fn_name() -> &'static TestReport {
            static RUN: OnceLock<TestReport> = OnceLock::new();
            RUN.get_or_init(|| corpus_run($name, &$cfg))
        }
    };
}

shared_run!(
    plain_dkt,
    "plain_dkt",
    accept_config(BackboneKind::Dkt, ReweightMode::None, 0.0, false)
);
shared_run!(
    dkt_lr,
    "dkt_lr",
    accept_config(BackboneKind::Dkt, ReweightMode::Dr4kt, 0.0, false)
);
shared_run!(
    dkt_dr4kt,
    "dkt_dr4kt",
    accept_config(BackboneKind::Dkt, ReweightMode::Dr4kt, 1.0, true)
);
shared_run!(
    dkt_ipw,
    "dkt_ipw",
    accept_config(BackboneKind::Dkt, ReweightMode::Ipw, 0.0, false)
);
shared_run!(
    plain_sakt,
    "plain_sakt",
    accept_config(BackboneKind::Sakt, ReweightMode::None, 0.0, false)
);
shared_run!(
    sakt_dr4kt,
    "sakt_dr4kt",
    accept_config(BackboneKind::Sakt, ReweightMode::Dr4kt, 1.0, true)
);

// ---------------------------------------------------------------------
// Closed-form suite (seconds).
// ---------------------------------------------------------------------

#[test]
fn criterion_closed_form_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut max_err: f64 = 0.0;

    for _ in 0..2000 {
        let b = clamp_prob(rng.gen());
        // Complement identity.
        max_err =
            max_err.max((discrimination_score(b, 1) + discrimination_score(b, 0) - 1.0).abs());

        // Weight map: w = delta^(1/tau1) with tau1 = 1 the identity.
        let delta = rng.gen_range(0.001..=1.0);
        let tau1 = rng.gen_range(0.2..4.0);
        let w = response_weight(delta, tau1).unwrap();
        max_err = max_err.max((w - delta.powf(1.0 / tau1)).abs());
        max_err = max_err.max((response_weight(delta, 1.0).unwrap() - delta).abs());

        // Fusion factor: zeta = delta_hat^(1/tau2).
        let tau2 = rng.gen_range(0.2..4.0);
        let zeta = fusion_factor(delta, tau2).unwrap();
        max_err = max_err.max((zeta - delta.powf(1.0 / tau2)).abs());

        // Convexity bound of the fused score.
        let (kt, tendency, z) = (rng.gen(), rng.gen(), rng.gen::<f64>());
        let fused: f64 = fuse_scores(kt, tendency, z);
        let inside = fused >= kt.min(tendency) - 1e-9 && fused <= kt.max(tendency) + 1e-9;
        if !inside {
            max_err = f64::INFINITY;
        }
    }

    // Weighted-BCE linearity in the weights.
    let mut batch = WeightedLossBatch::default();
    for _ in 0..200 {
        batch.push(
            rng.gen_range(0.02..0.98),
            rng.gen_range(0..2),
            rng.gen_range(0.05..1.0),
        );
    }
    let base = reweighted_bce(&batch).unwrap();
    for alpha in [0.25, 2.0, 7.5] {
        let mut scaled = batch.clone();
        scaled.weights.iter_mut().for_each(|w| *w *= alpha);
        max_err = max_err.max((reweighted_bce(&scaled).unwrap() - alpha * base).abs());
    }

    check(
        "closed_form_suite",
        max_err < 1e-9,
        &format!("max deviation {max_err:.2e} (tolerance 1e-9)"),
    );
}

// ---------------------------------------------------------------------
// Oracle suites.
// ---------------------------------------------------------------------

#[test]
fn criterion_auc_matches_pairwise_oracle() {
    fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (&sp, &lp) in scores.iter().zip(labels) {
            if lp != 1 {
                continue;
            }
            for (&sn, &ln) in scores.iter().zip(labels) {
                if ln != 0 {
                    continue;
                }
                pairs += 1.0;
                wins += if sp > sn {
                    1.0
                } else if sp == sn {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / pairs
    }

    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut max_err: f64 = 0.0;
    let mut instances = 0;
    while instances < 100 {
        let n = rng.gen_range(20..400);
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.gen_range(0..50) as f64) / 50.0)
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        if !labels.contains(&0) || !labels.contains(&1) {
            continue;
        }
        instances += 1;
        let fast = auc(&scores, &labels).unwrap();
        let slow = auc_pairwise(&scores, &labels);
        max_err = max_err.max((fast - slow).abs());
    }
    check(
        "auc_pairwise_oracle",
        max_err < 1e-12,
        &format!("max |rank - pairwise| = {max_err:.2e} over 100 instances (tolerance 1e-12)"),
    );
}

#[test]
fn criterion_empirical_discrimination_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut exact = true;
    for _ in 0..50 {
        let reference: Vec<ResponseRecord> = (0..rng.gen_range(5..200))
            .map(|i| ResponseRecord {
                student_id: format!("u{i}"),
                question_id: format!("q{}", rng.gen_range(0..6)),
                correctness: rng.gen_range(0..2),
                order_key: 0,
                concepts: vec![],
            })
            .collect();
        for q in 0..6 {
            let qid = format!("q{q}");
            for label in [0u8, 1u8] {
                // Independent counting oracle.
                let total = reference.iter().filter(|r| r.question_id == qid).count();
                let opposite = reference
                    .iter()
                    .filter(|r| r.question_id == qid && r.correctness != label)
                    .count();
                let oracle = if total == 0 {
                    None
                } else {
                    Some(opposite as f64 / total as f64)
                };
                if empirical_discrimination(&reference, &qid, label) != oracle {
                    exact = false;
                }
            }
        }
    }
    check(
        "empirical_discrimination_oracle",
        exact,
        "counting definition matches exactly on 50 random reference sets",
    );
}

#[test]
fn criterion_gradient_checks() {
    // Tendency MLP.
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut worst_mlp: f64 = 0.0;
    for trial in 0..3 {
        let mut est = TendencyEstimator::new(
            8,
            4,
            6,
            4,
            6,
            dr4kt_core::tendency::ConceptAggregation::Sum,
            500 + trial,
        );
        let items: Vec<PretrainItem> = (0..8)
            .map(|q| PretrainItem {
                question: q,
                concepts: vec![rng.gen_range(0..4)],
                target: rng.gen_range(0.05..0.95),
            })
            .collect();
        worst_mlp = worst_mlp.max(tendency_gradient_check(&mut est, &items, 1e-4).unwrap());
    }

    // Discrimination predictor MLP.
    for trial in 0..3 {
        let mut predictor = DiscriminationPredictor::new(5, 4, 3, 6, 600 + trial);
        let items: Vec<PredictorCheckItem> = (0..8)
            .map(|_| PredictorCheckItem {
                state: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                question_features: (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                target: rng.gen_range(0.05..0.95),
            })
            .collect();
        worst_mlp = worst_mlp.max(predictor_gradient_check(&mut predictor, &items).unwrap());
    }

    // Backbones through the full unrolled models.
    let mut worst_backbone: f64 = 0.0;
    for (len, seed) in [(2usize, 700u64), (5, 701)] {
        let seq = random_encoded(len, 6, 3, seed);
        let mut dkt = BackboneModel::Dkt(DktModel::new(6, 3, 5, 4, 4, seed));
        worst_backbone = worst_backbone.max(backbone_gradient_check(&mut dkt, &seq).unwrap());
        let mut sakt = BackboneModel::Sakt(SaktModel::new(6, 3, 5, 8, 4, seed));
        worst_backbone = worst_backbone.max(backbone_gradient_check(&mut sakt, &seq).unwrap());
    }

    check(
        "gradient_checks",
        worst_mlp < 1e-4 && worst_backbone < 1e-3,
        &format!(
            "MLP max rel err {worst_mlp:.2e} (tol 1e-4); backbone max rel err {worst_backbone:.2e} (tol 1e-3)"
        ),
    );
}

fn random_encoded(len: usize, num_q: usize, num_c: usize, seed: u64) -> EncodedSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EncodedSequence {
        id: format!("s{seed}"),
        steps: (0..len)
            .map(|_| EncodedStep {
                question: Some(rng.gen_range(0..num_q)),
                concepts: vec![rng.gen_range(0..num_c)],
                label: rng.gen_range(0..2),
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------
// Framework-off equivalence.
// ---------------------------------------------------------------------

#[test]
fn criterion_framework_off_equivalence() {
    // Small corpus; stage-2 with everything disabled must reproduce an
    // independently written plain-backbone trainer's updates.
    let rows = generate(&SynthConfig::small(33));
    let records: Vec<ResponseRecord> = rows
        .iter()
        .map(|r| ResponseRecord {
            student_id: r.user_id.clone(),
            question_id: r.problem_id.clone(),
            correctness: r.correct,
            order_key: r.order_id as i64,
            concepts: r.skill_id.split('_').map(str::to_string).collect(),
        })
        .collect();
    let qmatrix = build_q_matrix(&records);
    let split = split_sequences(segment_sequences(&records, 50, 5), (8, 1, 1), 33).unwrap();
    let stats = question_pass_rate(&split.train);
    let train = encode_sequences(&split.train, &qmatrix);
    let val = encode_sequences(&split.validation, &qmatrix);

    let mut cfg = ExperimentConfig::default();
    cfg.seed = 34;
    cfg.mode = ReweightMode::None;
    cfg.lambda = 0.0;
    cfg.fusion = false;
    cfg.dims.d_q = 8;
    cfg.dims.d_c = 6;
    cfg.dims.d_h_tendency = 8;
    cfg.dims.d_e = 8;
    cfg.dims.d_m = 8;
    cfg.dims.d_readout = 8;
    cfg.dims.d_h_predictor = 8;
    cfg.optimizer.batch_size = 16;
    cfg.epochs.stage2_max = 3;

    let mut tendency = TendencyEstimator::new(
        qmatrix.num_questions(),
        qmatrix.num_concepts(),
        8,
        6,
        8,
        dr4kt_core::tendency::ConceptAggregation::Sum,
        35,
    );
    tendency.freeze();
    let backbone = BackboneModel::Dkt(DktModel::new(
        qmatrix.num_questions(),
        qmatrix.num_concepts(),
        8,
        8,
        8,
        36,
    ));
    let predictor = DiscriminationPredictor::new(8, 8, 6, 8, 37);

    let out = dr4kt_core::training::train_stage2(
        backbone.clone(),
        predictor,
        &tendency,
        &stats,
        &qmatrix,
        dr4kt_core::training::Stage2Data {
            train: &train,
            validation: &val,
        },
        &cfg,
    )
    .unwrap();

    // Independent plain trainer: forward/backward + clip + Adam only.
    let mut plain = backbone;
    let mut adam = Adam::for_tensors(cfg.optimizer.lr_stage2, &plain.tensors());
    let mut accum = plain.zeros_like();
    let mut snapshots = Vec::new();
    for epoch in 0..cfg.epochs.stage2_max {
        let order = dr4kt_core::training::epoch_order(train.len(), cfg.seed, epoch);
        for batch in order.chunks(cfg.optimizer.batch_size) {
            let n: usize = batch.iter().map(|&i| train[i].len()).sum();
            let inv_n = 1.0 / n as f64;
            for (_, t) in accum.tensors_mut() {
                t.fill(0.0);
            }
            for &i in batch {
                let seq = &train[i];
                let (preds, cache) = plain.forward(seq);
                let dlogits: Vec<f64> = preds
                    .iter()
                    .zip(&seq.steps)
                    .map(|(p, s)| (p.prob - f64::from(s.label)) * inv_n)
                    .collect();
                let g = plain.backward(seq, &cache, &dlogits, None);
                BackboneModel::add_seq_grads(&mut accum, &g);
            }
            let norm = global_norm(&accum.tensors());
            if norm > cfg.optimizer.clip_norm && norm > 0.0 {
                let s = cfg.optimizer.clip_norm / norm;
                for (_, t) in accum.tensors_mut() {
                    t.scale(s);
                }
            }
            let grad_refs: Vec<&Mat> = accum.tensors().into_iter().map(|(_, t)| t).collect();
            adam.step(
                plain.tensors_mut().into_iter().map(|(_, t)| t).collect(),
                &grad_refs,
            );
        }
        snapshots.push(plain.clone());
    }

    let reference = &snapshots[out.report.best_epoch];
    let max_diff = out
        .backbone
        .tensors()
        .iter()
        .zip(reference.tensors())
        .flat_map(|((_, a), (_, b))| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0f64, f64::max);
    check(
        "framework_off_equivalence",
        max_diff < 1e-9,
        &format!("max parameter deviation from plain trainer {max_diff:.2e} (tolerance 1e-9)"),
    );
}

// ---------------------------------------------------------------------
// Causality.
// ---------------------------------------------------------------------

#[test]
fn criterion_causality() {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let dkt = BackboneModel::Dkt(DktModel::new(12, 5, 8, 8, 6, 801));
    let sakt = BackboneModel::Sakt(SaktModel::new(12, 5, 8, 24, 6, 802));
    let mut violations = 0u32;
    for trial in 0..25 {
        let seq = random_encoded(16, 12, 5, 900 + trial);
        for model in [&dkt, &sakt] {
            let (base, _) = model.forward(&seq);
            let t = rng.gen_range(0..16);
            let mut perturbed = seq.clone();
            // Perturb everything from t on: labels and question identities.
            for step in perturbed.steps.iter_mut().skip(t) {
                step.label ^= 1;
                step.question = Some(rng.gen_range(0..12));
                step.concepts = vec![rng.gen_range(0..5)];
            }
            let (out, _) = model.forward(&perturbed);
            for k in 0..t {
                if base[k].logit.to_bits() != out[k].logit.to_bits() {
                    violations += 1;
                }
            }
            // Flipping only the label at t never changes the output at t.
            let mut label_only = seq.clone();
            label_only.steps[t].label ^= 1;
            let (out, _) = model.forward(&label_only);
            if base[t].logit.to_bits() != out[t].logit.to_bits() {
                violations += 1;
            }
        }
    }
    check(
        "causality",
        violations == 0,
        &format!("{violations} earlier-step output changes across 25 randomized future perturbations x 2 backbones"),
    );
}

// ---------------------------------------------------------------------
// Corpus-scale reproductions.
// ---------------------------------------------------------------------

#[test]
fn criterion_imbalance_reproduction() {
    let corpus = corpus();
    let low = corpus.histogram.low_share;
    let plain = plain_dkt();
    let bin0 = plain.kt.levels.bin_acc[0].unwrap_or(0.0);
    let bin4 = plain.kt.levels.bin_acc[4].unwrap_or(1.0);
    let pass = (0.60..=0.80).contains(&low) && bin0 >= 0.90 && bin4 <= 0.30;
    check(
        "imbalance_reproduction",
        pass,
        &format!(
            "low-discrimination share {low:.4} (need 0.70 +/- 0.10); plain-dkt bin[0,0.2) acc {bin0:.4} (need >= 0.90), bin[0.8,1.0] acc {bin4:.4} (need <= 0.30) [{}]",
            corpus.source
        ),
    );
}

#[test]
fn criterion_headline_dkt() {
    let plain = plain_dkt();
    let full = dkt_dr4kt();
    let gap = full.fused.auc - plain.kt.auc;
    check(
        "headline_dkt",
        gap >= 0.010,
        &format!(
            "dkt+dr4kt test AUC {:.4} vs plain dkt {:.4}: gap {gap:+.4} (need >= +0.010)",
            full.fused.auc, plain.kt.auc
        ),
    );
}

#[test]
fn criterion_headline_sakt() {
    let plain = plain_sakt();
    let full = sakt_dr4kt();
    let gap = full.fused.auc - plain.kt.auc;
    check(
        "headline_sakt",
        gap >= 0.010,
        &format!(
            "sakt+dr4kt test AUC {:.4} vs plain sakt {:.4}: gap {gap:+.4} (need >= +0.010)",
            full.fused.auc, plain.kt.auc
        ),
    );
}

#[test]
fn criterion_balance_reproduction() {
    let plain = plain_dkt();
    let lr = dkt_lr();
    let full = dkt_dr4kt();
    let plain_bin4 = plain.kt.levels.bin_acc[4].unwrap_or(0.0);
    let lr_bin4 = lr.kt.levels.bin_acc[4].unwrap_or(0.0);
    let bin4_gain = lr_bin4 - plain_bin4;
    let lr_drop = lr.kt.acc < plain.kt.acc;
    let fused_recovers = full.fused.acc > plain.kt.acc;
    check(
        "balance_reproduction",
        bin4_gain >= 0.10 && lr_drop && fused_recovers,
        &format!(
            "dkt-lr bin[0.8,1.0] acc {lr_bin4:.4} vs plain {plain_bin4:.4} (gain {bin4_gain:+.4}, need >= +0.10); lr overall {:.4} < plain {:.4}: {lr_drop}; dr4kt fused acc {:.4} > plain: {fused_recovers}",
            lr.kt.acc, plain.kt.acc, full.fused.acc
        ),
    );
}

#[test]
fn criterion_ipw_pattern() {
    let plain = plain_dkt();
    let ipw = dkt_ipw();
    check(
        "ipw_pattern",
        ipw.kt.acc < plain.kt.acc,
        &format!(
            "ipw overall acc {:.4} vs plain {:.4} (must degrade)",
            ipw.kt.acc, plain.kt.acc
        ),
    );
}

#[test]
fn criterion_qt_only_predictor() {
    // Any corpus run carries the tendency column; use the plain run.
    let plain = plain_dkt();
    let qt = &plain.tendency;
    let bin0 = qt.levels.bin_acc[0].unwrap_or(0.0);
    let pass = bin0 >= 0.95 && (qt.acc - 0.745).abs() <= 0.02;
    check(
        "qt_only_predictor",
        pass,
        &format!(
            "tendency-only bin[0,0.2) acc {bin0:.4} (need >= 0.95); overall acc {:.4} (need 0.745 +/- 0.02)",
            qt.acc
        ),
    );
}

#[test]
fn criterion_sweep_location_report_only() {
    // The sweep-optimum location is reported, not CI-enforced: run
    //   dr4kt sweep --prepared <dir> --stage1 <dir> --out sweep/
    // and inspect figure4.csv. Not executed here (25 corpus-scale runs).
    println!(
        "ACCEPTANCE sweep_location: REPORT-ONLY — run `dr4kt sweep` and inspect figure4.csv; \
         expected optimum near tau1 in [1.0,1.5], tau2 in [1.5,2.0]"
    );
}

// ---------------------------------------------------------------------
// Error-path checks folded into the acceptance gate.
// ---------------------------------------------------------------------

#[test]
fn criterion_single_class_auc_is_signaled() {
    let err = auc(&[0.1, 0.9], &[1, 1]).unwrap_err();
    let ok = matches!(err, Error::SingleClass);
    // Accuracy stays defined either way.
    let _ = accuracy(&[0.1, 0.9], &[1, 1], 0.5);
    check(
        "single_class_auc_signaled",
        ok,
        "AUC on single-class labels returns the dedicated error",
    );
}
