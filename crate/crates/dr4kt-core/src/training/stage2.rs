//! Stage II: joint training of the backbone and the discrimination
//! predictor against the reweighted objective, with the tendency estimator
//! frozen. Loss weights and discrimination targets are constants in
//! backpropagation (they come from the frozen estimator and ground-truth
//! labels), so no gradient reaches the stage-I parameters.
//!
//! Per-batch gradients are computed per sequence (in parallel when the
//! `parallel` feature is on) and reduced in index order, so results are
//! bit-identical across thread counts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{BackboneModel, EncodedSequence, EncodedStep, SeqGrads};
use crate::dataset::QuestionStats;
use crate::error::{Error, Result};
use crate::eval::{accuracy, auc};
use crate::fusion::{fuse_scores, fusion_factor, DiscriminationPredictor};
use crate::nn::{global_norm, Adam, Mat, MlpGrads, ParamTensors};
use crate::par;
use crate::rebalance::{discrimination_score, ipw_level, response_weight};
use crate::tendency::TendencyEstimator;
use crate::training::{EpochStats, ExperimentConfig, ReweightMode, TrainReport};

/// Train/validation views over encoded sequences.
pub struct Stage2Data<'a> {
    pub train: &'a [EncodedSequence],
    pub validation: &'a [EncodedSequence],
}

#[derive(Debug)]
pub struct Stage2Output {
    pub backbone: BackboneModel,
    pub predictor: DiscriminationPredictor,
    pub report: TrainReport,
}

/// How train-time weights are derived.
enum WeightRule {
    Unit,
    /// delta from the serving tendency, tempered by tau1.
    Tempered,
    /// Inverse propensity of the pass-rate discrimination level.
    Ipw(Vec<Option<f64>>),
}

/// Per-question lookups shared by training and scoring. Built once per run
/// from the frozen tendency estimator and train statistics.
pub struct ScoringContext {
    /// Serving tendency per question index: the estimator's score, or the
    /// train pass rate in `freq` mode.
    serving_tendency: Vec<f64>,
    /// Frozen [e, qC] features per question index (discrimination-predictor
    /// input).
    features: Vec<Vec<f64>>,
    /// Train pass rate per question index (global mean where unseen).
    pass_rate: Vec<f64>,
    cold_tendency: f64,
    cold_features: Vec<f64>,
    weights: WeightRule,
    tau1: f64,
    tau2: f64,
    lambda: f64,
    fusion: bool,
    include_first_step: bool,
    dropout_predictor: f64,
    ipw_levels: usize,
}

impl ScoringContext {
    pub fn build(
        tendency: &TendencyEstimator,
        stats: &QuestionStats,
        qmatrix: &crate::dataset::QMatrix,
        config: &ExperimentConfig,
    ) -> Result<ScoringContext> {
        config.validate()?;
        let n_q = qmatrix.num_questions();
        let mut mlp_scores = Vec::with_capacity(n_q);
        let mut features = Vec::with_capacity(n_q);
        for q in 0..n_q {
            let row = qmatrix.row(q);
            mlp_scores.push(tendency.forward(Some(q), row));
            features.push(tendency.question_features(Some(q), row));
        }

        let mut rate_sum = 0.0;
        let mut n_sum = 0u64;
        for (_, rate, n) in stats.iter() {
            rate_sum += rate * f64::from(n);
            n_sum += u64::from(n);
        }
        let global_rate = if n_sum > 0 {
            rate_sum / n_sum as f64
        } else {
            0.5
        };
        let pass_rate: Vec<f64> = (0..n_q)
            .map(|q| {
                stats
                    .pass_rate(qmatrix.question_id(q))
                    .unwrap_or(global_rate)
            })
            .collect();

        let serving_tendency = match config.mode {
            ReweightMode::Freq => pass_rate
                .iter()
                .map(|&r| r.clamp(crate::nn::PROB_EPS, 1.0 - crate::nn::PROB_EPS))
                .collect(),
            _ => mlp_scores,
        };
        let cold_tendency = match config.mode {
            ReweightMode::Freq => global_rate.clamp(crate::nn::PROB_EPS, 1.0 - crate::nn::PROB_EPS),
            _ => tendency.forward(None, &[]),
        };

        let weights = match config.mode {
            ReweightMode::None => WeightRule::Unit,
            ReweightMode::Dr4kt | ReweightMode::Freq => WeightRule::Tempered,
            ReweightMode::Ipw => WeightRule::Ipw(crate::rebalance::ipw_level_weights_from_stats(
                stats,
                config.ipw_levels,
            )?),
        };

        Ok(ScoringContext {
            serving_tendency,
            features,
            pass_rate,
            cold_tendency,
            cold_features: tendency.question_features(None, &[]),
            weights,
            tau1: config.tau1,
            tau2: config.tau2,
            lambda: config.lambda,
            fusion: config.fusion,
            include_first_step: config.include_first_step,
            dropout_predictor: config.optimizer.dropout_predictor,
            ipw_levels: config.ipw_levels,
        })
    }

    pub fn tendency_of(&self, step: &EncodedStep) -> f64 {
        match step.question {
            Some(q) => self.serving_tendency[q],
            None => self.cold_tendency,
        }
    }

    fn features_of(&self, step: &EncodedStep) -> &[f64] {
        match step.question {
            Some(q) => &self.features[q],
            None => &self.cold_features,
        }
    }

    fn step_weight(&self, step: &EncodedStep) -> f64 {
        match &self.weights {
            WeightRule::Unit => 1.0,
            WeightRule::Tempered => {
                let delta = discrimination_score(self.tendency_of(step), step.label);
                response_weight(delta, self.tau1).expect("tau validated")
            }
            WeightRule::Ipw(levels) => {
                let rate = match step.question {
                    Some(q) => self.pass_rate[q],
                    None => return 1.0,
                };
                let delta = discrimination_score(
                    rate.clamp(crate::nn::PROB_EPS, 1.0 - crate::nn::PROB_EPS),
                    step.label,
                );
                levels[ipw_level(delta, self.ipw_levels)].unwrap_or(1.0)
            }
        }
    }
}

/// All scores for one step of one sequence.
#[derive(Clone, Debug)]
pub struct StepScore {
    pub kt: f64,
    pub tendency: f64,
    pub delta_hat: f64,
    pub zeta: f64,
    pub fused: f64,
    pub label: u8,
}

/// Patience-based early stopping on a maximized validation metric.
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    since_best: usize,
    best_index: usize,
    seen: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        EarlyStopper {
            patience,
            best: f64::NEG_INFINITY,
            since_best: 0,
            best_index: 0,
            seen: 0,
        }
    }

    /// Feed the next epoch's metric; returns true when it set a new best.
    pub fn observe(&mut self, value: f64) -> bool {
        let improved = value > self.best;
        if improved {
            self.best = value;
            self.best_index = self.seen;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.seen += 1;
        improved
    }

    /// True once `patience` consecutive epochs failed to improve the best.
    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_index(&self) -> usize {
        self.best_index
    }
}

/// Deterministic per-epoch shuffle of `0..n`, reproducible by external
/// reimplementations of the training loop.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ 0x0ba7_c0de ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    );
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Per-sequence dropout stream seed, fixed by (run seed, epoch, sequence).
pub fn dropout_seed(seed: u64, epoch: usize, seq_index: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (seq_index as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

struct SeqTrainResult {
    grads: SeqGrads,
    predictor_grads: Option<MlpGrads>,
    sum_weighted_bce: f64,
    sum_disc_sq: f64,
}

fn loss_step_count(seq: &EncodedSequence, include_first_step: bool) -> usize {
    if include_first_step {
        seq.len()
    } else {
        seq.len().saturating_sub(1)
    }
}

fn train_sequence(
    backbone: &BackboneModel,
    predictor: &DiscriminationPredictor,
    ctx: &ScoringContext,
    seq: &EncodedSequence,
    inv_n: f64,
    dropout_stream: u64,
    train_predictor: bool,
) -> SeqTrainResult {
    let (preds, cache) = backbone.forward(seq);
    let t_len = seq.len();
    let mut dlogits = vec![0.0; t_len];
    let mut dstates: Option<Vec<Vec<f64>>> =
        train_predictor.then(|| vec![vec![0.0; backbone.state_dim()]; t_len]);
    let mut predictor_grads = train_predictor.then(|| predictor.mlp.zero_grads());
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_stream);

    let mut sum_weighted_bce = 0.0;
    let mut sum_disc_sq = 0.0;

    for (t, step) in seq.steps.iter().enumerate() {
        if t == 0 && !ctx.include_first_step {
            continue;
        }
        let label = f64::from(step.label);
        let p = preds[t].prob;
        let bce = if step.label == 1 {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        };
        let w = ctx.step_weight(step);
        sum_weighted_bce += w * bce;
        dlogits[t] = w * (p - label) * inv_n;

        if train_predictor {
            let delta = discrimination_score(ctx.tendency_of(step), step.label);
            let kcache = predictor.forward(
                &preds[t].state,
                ctx.features_of(step),
                if ctx.dropout_predictor > 0.0 {
                    Some((ctx.dropout_predictor, &mut rng))
                } else {
                    None
                },
            );
            let dhat = kcache.p;
            sum_disc_sq += (delta - dhat) * (delta - dhat);
            let dklogit = ctx.lambda * 2.0 * (dhat - delta) * dhat * (1.0 - dhat) * inv_n;
            predictor.backward(
                &kcache,
                dklogit,
                predictor_grads.as_mut().expect("grads exist"),
                Some(&mut dstates.as_mut().expect("dstates exist")[t]),
            );
        }
    }

    let grads = backbone.backward(seq, &cache, &dlogits, dstates.as_deref());
    SeqTrainResult {
        grads,
        predictor_grads,
        sum_weighted_bce,
        sum_disc_sq,
    }
}

/// Score a sequence with a trained model (no dropout): backbone score,
/// serving tendency, predicted discrimination, fusion factor and fused
/// score per step.
pub fn score_sequence(
    backbone: &BackboneModel,
    predictor: &DiscriminationPredictor,
    ctx: &ScoringContext,
    seq: &EncodedSequence,
) -> Vec<StepScore> {
    let (preds, _) = backbone.forward(seq);
    preds
        .iter()
        .zip(&seq.steps)
        .map(|(pred, step)| {
            let tendency = ctx.tendency_of(step);
            let delta_hat = predictor
                .forward(&pred.state, ctx.features_of(step), None)
                .p;
            let zeta = if ctx.fusion {
                fusion_factor(delta_hat, ctx.tau2).expect("tau validated")
            } else {
                1.0
            };
            StepScore {
                kt: pred.prob,
                tendency,
                delta_hat,
                zeta,
                fused: fuse_scores(pred.prob, tendency, zeta),
                label: step.label,
            }
        })
        .collect()
}

/// Served scores and labels over a sequence set, flattened in input order.
pub fn evaluate_served(
    backbone: &BackboneModel,
    predictor: &DiscriminationPredictor,
    ctx: &ScoringContext,
    seqs: &[EncodedSequence],
) -> (Vec<f64>, Vec<u8>) {
    let per_seq = par::map_collect(seqs, |seq| {
        score_sequence(backbone, predictor, ctx, seq)
            .into_iter()
            .map(|s| (s.fused, s.label))
            .collect::<Vec<_>>()
    });
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for seq_scores in per_seq {
        for (s, l) in seq_scores {
            scores.push(s);
            labels.push(l);
        }
    }
    (scores, labels)
}

/// One audit row per train response: the discrimination score implied by
/// the serving tendency and the label, and the loss weight the configured
/// mode assigns.
pub fn train_weight_rows(
    ctx: &ScoringContext,
    train: &[EncodedSequence],
    qmatrix: &crate::dataset::QMatrix,
) -> Vec<(String, usize, String, u8, f64, f64)> {
    let mut rows = Vec::new();
    for seq in train {
        for (step_index, step) in seq.steps.iter().enumerate() {
            let delta = discrimination_score(ctx.tendency_of(step), step.label);
            let weight = ctx.step_weight(step);
            let qid = step
                .question
                .map(|q| qmatrix.question_id(q).to_string())
                .unwrap_or_else(|| "<cold>".to_string());
            rows.push((seq.id.clone(), step_index, qid, step.label, delta, weight));
        }
    }
    rows
}

/// Full-sequence stage-II loss (no dropout): mean weighted BCE plus
/// lambda times the mean squared discrimination error. Used by the joint
/// gradient check and the framework-off equivalence tests.
pub fn sequence_loss(
    backbone: &BackboneModel,
    predictor: &DiscriminationPredictor,
    ctx: &ScoringContext,
    seq: &EncodedSequence,
) -> f64 {
    let (preds, _) = backbone.forward(seq);
    let mut sum_lr = 0.0;
    let mut sum_disc = 0.0;
    let mut n = 0usize;
    for (t, step) in seq.steps.iter().enumerate() {
        if t == 0 && !ctx.include_first_step {
            continue;
        }
        let p = preds[t].prob;
        let bce = if step.label == 1 {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        };
        sum_lr += ctx.step_weight(step) * bce;
        let delta = discrimination_score(ctx.tendency_of(step), step.label);
        let dhat = predictor
            .forward(&preds[t].state, ctx.features_of(step), None)
            .p;
        sum_disc += (delta - dhat) * (delta - dhat);
        n += 1;
    }
    (sum_lr + ctx.lambda * sum_disc) / n as f64
}

pub fn train_stage2(
    backbone: BackboneModel,
    predictor: DiscriminationPredictor,
    tendency: &TendencyEstimator,
    stats: &QuestionStats,
    qmatrix: &crate::dataset::QMatrix,
    data: Stage2Data<'_>,
    config: &ExperimentConfig,
) -> Result<Stage2Output> {
    config.validate()?;
    if !tendency.is_frozen() {
        return Err(Error::Frozen);
    }
    if backbone.state_dim() != predictor.state_dim() {
        return Err(Error::Config(format!(
            "backbone state dim {} does not match predictor state dim {}",
            backbone.state_dim(),
            predictor.state_dim()
        )));
    }
    if data.train.is_empty() {
        return Err(Error::Data("no training sequences".into()));
    }

    let started = std::time::Instant::now();
    let ctx = ScoringContext::build(tendency, stats, qmatrix, config)?;
    let train_predictor = config.lambda > 0.0;

    let mut backbone = backbone;
    let mut predictor = predictor;
    let mut adam_backbone = Adam::for_tensors(config.optimizer.lr_stage2, &backbone.tensors());
    let mut adam_predictor =
        Adam::for_tensors(config.optimizer.lr_stage2, &predictor.mlp.tensors());

    let mut accum = backbone.zeros_like();
    let mut predictor_accum = predictor.mlp.zero_grads();

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        early_stopped: false,
        wall_clock_secs: 0.0,
    };
    let mut stopper = EarlyStopper::new(config.epochs.patience);
    let mut best_models: Option<(BackboneModel, DiscriminationPredictor)> = None;

    'epochs: for epoch in 0..config.epochs.stage2_max {
        let order = epoch_order(data.train.len(), config.seed, epoch);
        let mut epoch_lr = 0.0;
        let mut epoch_disc = 0.0;
        let mut epoch_batches = 0usize;

        for batch in order.chunks(config.optimizer.batch_size) {
            let n_steps: usize = batch
                .iter()
                .map(|&i| loss_step_count(&data.train[i], config.include_first_step))
                .sum();
            if n_steps == 0 {
                continue;
            }
            let inv_n = 1.0 / n_steps as f64;

            let batch_items: Vec<(usize, &EncodedSequence)> =
                batch.iter().map(|&i| (i, &data.train[i])).collect();
            let results: Vec<SeqTrainResult> = par::map_collect(&batch_items, |&(i, seq)| {
                train_sequence(
                    &backbone,
                    &predictor,
                    &ctx,
                    seq,
                    inv_n,
                    dropout_seed(config.seed, epoch, i),
                    train_predictor,
                )
            });

            for (_, t) in accum.tensors_mut() {
                t.fill(0.0);
            }
            for (_, t) in predictor_accum.tensors_mut() {
                t.fill(0.0);
            }
            let mut sum_lr = 0.0;
            let mut sum_disc = 0.0;
            for r in &results {
                BackboneModel::add_seq_grads(&mut accum, &r.grads);
                if let Some(pg) = &r.predictor_grads {
                    predictor_accum.add_assign(pg);
                }
                sum_lr += r.sum_weighted_bce;
                sum_disc += r.sum_disc_sq;
            }
            let loss_lr = sum_lr * inv_n;
            let loss_disc = sum_disc * inv_n;
            let mut batch_loss = loss_lr + config.lambda * loss_disc;
            if train_predictor && config.optimizer.l2_predictor > 0.0 {
                batch_loss += config.optimizer.l2_predictor * predictor.mlp.l2_weight_sq();
                predictor
                    .mlp
                    .add_l2_grads(&mut predictor_accum, config.optimizer.l2_predictor);
            }

            if !batch_loss.is_finite() {
                // Divergence: stop and keep the last good (best) checkpoint.
                if let Some((bb, bp)) = best_models.take() {
                    backbone = bb;
                    predictor = bp;
                    report.early_stopped = true;
                    break 'epochs;
                }
                return Err(Error::Numeric(format!(
                    "stage-2 loss diverged in epoch {epoch} before any validated checkpoint"
                )));
            }

            // Joint gradient-norm clip across backbone and predictor.
            let mut norm_sq = global_norm(&accum.tensors()).powi(2);
            if train_predictor {
                norm_sq += global_norm(&predictor_accum.tensors()).powi(2);
            }
            let norm = norm_sq.sqrt();
            if norm > config.optimizer.clip_norm && norm > 0.0 {
                let s = config.optimizer.clip_norm / norm;
                for (_, t) in accum.tensors_mut() {
                    t.scale(s);
                }
                if train_predictor {
                    for (_, t) in predictor_accum.tensors_mut() {
                        t.scale(s);
                    }
                }
            }

            let grad_refs: Vec<&Mat> = accum.tensors().into_iter().map(|(_, t)| t).collect();
            adam_backbone.step(
                backbone.tensors_mut().into_iter().map(|(_, t)| t).collect(),
                &grad_refs,
            );
            if train_predictor {
                let grad_refs: Vec<&Mat> = predictor_accum
                    .tensors()
                    .into_iter()
                    .map(|(_, t)| t)
                    .collect();
                adam_predictor.step(
                    predictor
                        .mlp
                        .tensors_mut()
                        .into_iter()
                        .map(|(_, t)| t)
                        .collect(),
                    &grad_refs,
                );
            }

            epoch_lr += loss_lr;
            epoch_disc += loss_disc;
            epoch_batches += 1;
        }

        let (scores, labels) = evaluate_served(&backbone, &predictor, &ctx, data.validation);
        let val_auc = auc(&scores, &labels)?;
        let val_acc = accuracy(&scores, &labels, 0.5);
        let denom = epoch_batches.max(1) as f64;
        report.epochs.push(EpochStats {
            epoch,
            train_loss: (epoch_lr + config.lambda * epoch_disc) / denom,
            loss_lr: epoch_lr / denom,
            loss_disc: epoch_disc / denom,
            val_auc,
            val_acc,
        });

        if stopper.observe(val_auc) {
            report.best_epoch = epoch;
            best_models = Some((backbone.clone(), predictor.clone()));
        } else if stopper.should_stop() {
            report.early_stopped = true;
            break;
        }
    }

    if let Some((bb, bp)) = best_models {
        backbone = bb;
        predictor = bp;
    }
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(Stage2Output {
        backbone,
        predictor,
        report,
    })
}
