//! Two-stage training orchestration: stage I pretrains and freezes the
//! question tendency estimator; stage II jointly trains the backbone and
//! the discrimination predictor under the reweighted objective
//! L = L_lr + lambda * L_disc with validation-based early stopping.

pub mod encode;
pub mod experiment;
pub mod stage2;

pub use encode::encode_sequences;
pub use experiment::{
    load_prepared, run_experiment, run_stage1, write_prepared, ExperimentArtifacts, PreparedData,
    TestReport,
};
pub use stage2::{epoch_order, train_stage2, train_weight_rows, Stage2Data, Stage2Output};

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneKind, TokenGranularity};
use crate::error::{Error, Result};
use crate::tendency::ConceptAggregation;

/// How train-time loss weights are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReweightMode {
    /// Discrimination from the frozen tendency estimator, tempered by tau1.
    Dr4kt,
    /// Inverse propensity of the empirical-discrimination level.
    Ipw,
    /// Unit weights (the plain backbone objective).
    None,
    /// Ablation: question pass rates stand in for the tendency estimator and
    /// the counting approximation for the discrimination score.
    Freq,
}

impl std::fmt::Display for ReweightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ReweightMode::Dr4kt => "dr4kt",
            ReweightMode::Ipw => "ipw",
            ReweightMode::None => "none",
            ReweightMode::Freq => "freq",
        };
        f.write_str(s)
    }
}

/// Embedding and hidden sizes for every module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dims {
    /// Question embedding size in the tendency estimator.
    pub d_q: usize,
    /// Concept embedding size in the tendency estimator.
    pub d_c: usize,
    /// Hidden width of the tendency MLP.
    pub d_h_tendency: usize,
    /// Backbone interaction-embedding size.
    pub d_e: usize,
    /// Backbone state size (LSTM hidden / attention model dim).
    pub d_m: usize,
    /// Hidden width of the backbone readout.
    pub d_readout: usize,
    /// Hidden width of the discrimination predictor.
    pub d_h_predictor: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            d_q: 64,
            d_c: 32,
            d_h_tendency: 64,
            d_e: 64,
            d_m: 64,
            d_readout: 64,
            d_h_predictor: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    /// Stage-I minibatch size (per-question examples).
    pub batch_size_stage1: usize,
    /// Stage-II minibatch size (sequences).
    pub batch_size: usize,
    pub clip_norm: f64,
    pub l2_tendency: f64,
    pub l2_predictor: f64,
    pub dropout_tendency: f64,
    pub dropout_predictor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr_stage1: 1e-3,
            lr_stage2: 1e-3,
            batch_size_stage1: 256,
            batch_size: 64,
            clip_norm: 5.0,
            l2_tendency: 1e-5,
            l2_predictor: 1e-5,
            dropout_tendency: 0.2,
            dropout_predictor: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpochConfig {
    pub stage1_max: usize,
    pub stage2_max: usize,
    /// Early stop after this many epochs without validation improvement.
    pub patience: usize,
}

impl Default for EpochConfig {
    fn default() -> Self {
        EpochConfig {
            stage1_max: 100,
            stage2_max: 100,
            patience: 10,
        }
    }
}

/// Every knob of one experiment; serialized verbatim into each run
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub backbone: BackboneKind,
    pub mode: ReweightMode,
    /// Reweighting temperature (Eq. on loss weights).
    pub tau1: f64,
    /// Fusion temperature.
    pub tau2: f64,
    /// Weight of the discrimination-prediction loss.
    pub lambda: f64,
    /// Serve the fused score; when false the backbone score is served
    /// (fusion factor forced to 1).
    pub fusion: bool,
    /// Backbone token granularity. The classic baselines consume
    /// concept-level tokens; question adds per-question embeddings.
    pub tokens: TokenGranularity,
    pub dims: Dims,
    pub optimizer: OptimizerConfig,
    pub epochs: EpochConfig,
    /// Include step 1 (empty history, zero state) in the loss.
    pub include_first_step: bool,
    pub concept_aggregation: ConceptAggregation,
    /// Questions with fewer train answers than this are excluded from level
    /// bins and histograms.
    pub min_question_count: u32,
    pub ipw_levels: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            backbone: BackboneKind::Dkt,
            mode: ReweightMode::Dr4kt,
            tau1: 1.0,
            tau2: 1.5,
            lambda: 1.0,
            fusion: true,
            tokens: TokenGranularity::Question,
            dims: Dims::default(),
            optimizer: OptimizerConfig::default(),
            epochs: EpochConfig::default(),
            include_first_step: true,
            concept_aggregation: ConceptAggregation::Sum,
            min_question_count: 10,
            ipw_levels: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau1 <= 0.0 || self.tau2 <= 0.0 {
            return Err(Error::Config(format!(
                "temperatures must be positive (tau1 = {}, tau2 = {})",
                self.tau1, self.tau2
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.epochs.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.optimizer.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.ipw_levels == 0 {
            return Err(Error::Config("ipw_levels must be at least 1".into()));
        }
        match self.backbone {
            BackboneKind::Dkt | BackboneKind::Sakt => Ok(()),
            other => Err(Error::Config(format!(
                "backbone `{other}` is a declared extension point and is not implemented; \
                 available: dkt, sakt"
            ))),
        }
    }
}

/// Mean squared error between discrimination targets and predictions over
/// unmasked steps.
pub fn disc_mse_loss(targets: &[f64], predictions: &[f64], mask: Option<&[bool]>) -> f64 {
    assert_eq!(targets.len(), predictions.len());
    let mut sum = 0.0;
    let mut n = 0u64;
    for i in 0..targets.len() {
        if let Some(m) = mask {
            if !m[i] {
                continue;
            }
        }
        let d = targets[i] - predictions[i];
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// L = L_lr + lambda * L_disc.
pub fn total_loss(loss_lr: f64, loss_disc: f64, lambda: f64) -> f64 {
    loss_lr + lambda * loss_disc
}

/// Metrics for one epoch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub loss_lr: f64,
    pub loss_disc: f64,
    pub val_auc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Index (into `epochs`) of the epoch with the best validation AUC.
    pub best_epoch: usize,
    pub early_stopped: bool,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn best(&self) -> &EpochStats {
        &self.epochs[self.best_epoch]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_mse_examples() {
        assert_eq!(disc_mse_loss(&[0.3, 0.7], &[0.3, 0.7], None), 0.0);
        assert_eq!(disc_mse_loss(&[0.0, 1.0], &[1.0, 0.0], None), 1.0);
        // Masked steps are excluded.
        assert_eq!(
            disc_mse_loss(&[0.0, 1.0], &[1.0, 1.0], Some(&[false, true])),
            0.0
        );
    }

    #[test]
    fn disc_mse_matches_elementwise_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        let t: Vec<f64> = (0..100).map(|_| rng.gen()).collect();
        let p: Vec<f64> = (0..100).map(|_| rng.gen()).collect();
        let oracle: f64 = t
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 100.0;
        assert!((disc_mse_loss(&t, &p, None) - oracle).abs() < 1e-12);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.0, 2.0, 0.0), 1.0);
        assert_eq!(total_loss(1.0, 2.0, 0.5), 2.0);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig {
            seed: 7,
            backbone: BackboneKind::Sakt,
            mode: ReweightMode::Freq,
            tau1: 1.5,
            ..ExperimentConfig::default()
        };
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        // Partial configs pick up defaults.
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.tau2, 1.5);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = ExperimentConfig::default();
        cfg.tau1 = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.lambda = -0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.epochs.patience = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.backbone = BackboneKind::Akt;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("extension point"));
    }
}
