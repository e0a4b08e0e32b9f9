//! The question tendency estimator: a 2-layer MLP over the question's id
//! embedding concatenated with its aggregated concept embedding, producing
//! the probability that the question is answered correctly by the
//! population. Pretrained against per-question mean correctness in stage I
//! and frozen for the rest of the pipeline; the frozen flag is enforced, not
//! advisory.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_max_rel_error, tensor_clones};
use crate::nn::{embedding_init, Adam, Mat, MlpGrads, ParamTensors, SigmoidMlp};

/// How a question's concept rows are aggregated into the qC term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptAggregation {
    /// Plain sum of the selected concept embedding rows (the literal
    /// Q-matrix row product). Default.
    #[default]
    Sum,
    /// Mean of the selected rows; normalizes multi-concept questions.
    Mean,
}

/// Question and concept embeddings plus the MLP head.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TendencyParams {
    pub question_emb: Mat, // |Q| x d_q
    pub concept_emb: Mat,  // |C| x d_c
    pub mlp: SigmoidMlp,   // in = d_q + d_c
}

impl ParamTensors for TendencyParams {
    fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("question_emb", &self.question_emb),
            ("concept_emb", &self.concept_emb),
            ("mlp.w1", &self.mlp.w1),
            ("mlp.b1", &self.mlp.b1),
            ("mlp.w2", &self.mlp.w2),
            ("mlp.b2", &self.mlp.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        vec![
            ("question_emb", &mut self.question_emb),
            ("concept_emb", &mut self.concept_emb),
            ("mlp.w1", &mut self.mlp.w1),
            ("mlp.b1", &mut self.mlp.b1),
            ("mlp.w2", &mut self.mlp.w2),
            ("mlp.b2", &mut self.mlp.b2),
        ]
    }
}

impl TendencyParams {
    fn zeros_like(&self) -> TendencyParams {
        TendencyParams {
            question_emb: self.question_emb.zeros_like(),
            concept_emb: self.concept_emb.zeros_like(),
            mlp: SigmoidMlp {
                w1: self.mlp.w1.zeros_like(),
                b1: self.mlp.b1.zeros_like(),
                w2: self.mlp.w2.zeros_like(),
                b2: self.mlp.b2.zeros_like(),
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TendencyEstimator {
    params: TendencyParams,
    frozen: bool,
    aggregation: ConceptAggregation,
}

/// One pretraining example: a question, its concept row, and the target mean
/// correctness over the train split.
#[derive(Clone, Debug)]
pub struct PretrainItem {
    pub question: usize,
    pub concepts: Vec<usize>,
    pub target: f64,
}

/// Stage-I optimization settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TendencyTrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub l2: f64,
    /// Stop when the epoch loss has not improved for this many epochs.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TendencyTrainConfig {
    fn default() -> Self {
        TendencyTrainConfig {
            learning_rate: 1e-3,
            max_epochs: 100,
            batch_size: 256,
            dropout: 0.2,
            l2: 1e-5,
            patience: 10,
            seed: 0,
        }
    }
}

impl TendencyEstimator {
    pub fn new(
        num_questions: usize,
        num_concepts: usize,
        d_q: usize,
        d_c: usize,
        d_hidden: usize,
        aggregation: ConceptAggregation,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e6d_e6c7);
        TendencyEstimator {
            params: TendencyParams {
                question_emb: embedding_init(num_questions, d_q, &mut rng),
                concept_emb: embedding_init(num_concepts, d_c, &mut rng),
                mlp: SigmoidMlp::new(d_q + d_c, d_hidden, &mut rng),
            },
            frozen: false,
            aggregation,
        }
    }

    pub fn question_dim(&self) -> usize {
        self.params.question_emb.cols()
    }

    pub fn concept_dim(&self) -> usize {
        self.params.concept_emb.cols()
    }

    pub fn num_questions(&self) -> usize {
        self.params.question_emb.rows()
    }

    pub fn num_concepts(&self) -> usize {
        self.params.concept_emb.rows()
    }

    pub fn aggregation(&self) -> ConceptAggregation {
        self.aggregation
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn params(&self) -> &TendencyParams {
        &self.params
    }

    /// Mutable parameter access; refused once frozen.
    pub fn params_mut(&mut self) -> Result<&mut TendencyParams> {
        if self.frozen {
            Err(Error::Frozen)
        } else {
            Ok(&mut self.params)
        }
    }

    pub(crate) fn from_parts(
        params: TendencyParams,
        frozen: bool,
        aggregation: ConceptAggregation,
    ) -> Self {
        TendencyEstimator {
            params,
            frozen,
            aggregation,
        }
    }

    /// The MLP input [e + qC]: question embedding (zeros for a cold/unknown
    /// question) concatenated with the aggregated concept rows. Shared with
    /// the discrimination predictor, which reuses the frozen embeddings.
    pub fn question_features(&self, question: Option<usize>, concepts: &[usize]) -> Vec<f64> {
        let d_q = self.question_dim();
        let d_c = self.concept_dim();
        let mut x = vec![0.0; d_q + d_c];
        if let Some(q) = question {
            x[..d_q].copy_from_slice(self.params.question_emb.row(q));
        }
        for &c in concepts {
            let row = self.params.concept_emb.row(c);
            for (xi, r) in x[d_q..].iter_mut().zip(row) {
                *xi += r;
            }
        }
        if self.aggregation == ConceptAggregation::Mean && concepts.len() > 1 {
            let inv = 1.0 / concepts.len() as f64;
            for xi in &mut x[d_q..] {
                *xi *= inv;
            }
        }
        x
    }

    /// Tendency score in (0,1). `question = None` takes the cold-question
    /// path: zero id embedding, concept term only.
    pub fn forward(&self, question: Option<usize>, concepts: &[usize]) -> f64 {
        let x = self.question_features(question, concepts);
        self.params.mlp.forward(&x, None).p
    }

    /// Pretraining loss over `items` (deterministic, no dropout): mean
    /// cross-entropy between predicted tendency and target mean correctness,
    /// plus the L2 penalty on the MLP weights.
    pub fn pretrain_loss(&self, items: &[PretrainItem], l2: f64) -> f64 {
        let mut sum = 0.0;
        for item in items {
            let p = self.forward(Some(item.question), &item.concepts);
            sum += -(item.target * p.ln() + (1.0 - item.target) * (1.0 - p).ln());
        }
        sum / items.len() as f64 + l2 * self.params.mlp.l2_weight_sq()
    }

    /// Analytic gradients of [`Self::pretrain_loss`] (no dropout).
    fn pretrain_grads(&self, items: &[PretrainItem], l2: f64) -> TendencyParams {
        let mut grads = self.params.zeros_like();
        self.accumulate_batch_grads(items, l2, None, &mut grads);
        grads
    }

    /// Accumulate gradients for one batch; `dropout` supplies the rate and a
    /// stream for the hidden-layer masks during stage-I training.
    fn accumulate_batch_grads(
        &self,
        items: &[PretrainItem],
        l2: f64,
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
        grads: &mut TendencyParams,
    ) -> f64 {
        let d_q = self.question_dim();
        let scale = 1.0 / items.len() as f64;
        let mut loss = 0.0;
        let mut mlp_grads = MlpGrads {
            w1: grads.mlp.w1.clone(),
            b1: grads.mlp.b1.clone(),
            w2: grads.mlp.w2.clone(),
            b2: grads.mlp.b2.clone(),
        };
        for item in items {
            let x = self.question_features(Some(item.question), &item.concepts);
            let cache = match &mut dropout {
                Some((rate, rng)) => self.params.mlp.forward(&x, Some((*rate, rng))),
                None => self.params.mlp.forward(&x, None),
            };
            loss += -(item.target * cache.p.ln() + (1.0 - item.target) * (1.0 - cache.p).ln());
            let dlogit = (cache.p - item.target) * scale;
            let mut dx = vec![0.0; x.len()];
            self.params
                .mlp
                .backward(&cache, dlogit, &mut mlp_grads, Some(&mut dx));

            // Split dx into the question row and the concept aggregate.
            let gq = grads.question_emb.row_mut(item.question);
            for (g, d) in gq.iter_mut().zip(&dx[..d_q]) {
                *g += d;
            }
            let concept_scale =
                if self.aggregation == ConceptAggregation::Mean && item.concepts.len() > 1 {
                    1.0 / item.concepts.len() as f64
                } else {
                    1.0
                };
            for &c in &item.concepts {
                let gc = grads.concept_emb.row_mut(c);
                for (g, d) in gc.iter_mut().zip(&dx[d_q..]) {
                    *g += concept_scale * d;
                }
            }
        }
        self.params.mlp.add_l2_grads(&mut mlp_grads, l2);
        grads.mlp.w1 = mlp_grads.w1;
        grads.mlp.b1 = mlp_grads.b1;
        grads.mlp.w2 = mlp_grads.w2;
        grads.mlp.b2 = mlp_grads.b2;
        loss * scale + l2 * self.params.mlp.l2_weight_sq()
    }
}

/// Stage I: minimize the per-question cross-entropy against train pass
/// rates with Adam, dropout on the MLP hidden layer and L2 on its weights.
/// Freezes the estimator on success and returns per-epoch losses.
pub fn pretrain_tendency(
    estimator: &mut TendencyEstimator,
    items: &[PretrainItem],
    config: &TendencyTrainConfig,
) -> Result<Vec<f64>> {
    if items.is_empty() {
        return Err(Error::Data(
            "no pretraining items (empty pass-rate map)".into(),
        ));
    }
    if estimator.is_frozen() {
        return Err(Error::Frozen);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0051_a9e1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x00d2_00b1);

    let shapes: Vec<(usize, usize)> = estimator
        .params()
        .tensors()
        .iter()
        .map(|(_, t)| (t.rows(), t.cols()))
        .collect();
    let mut opt = Adam::new(config.learning_rate, &shapes);

    let mut epoch_losses = Vec::with_capacity(config.max_epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut grads = estimator.params().zeros_like();

    for _epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<PretrainItem> = chunk.iter().map(|&i| items[i].clone()).collect();
            for (_, t) in grads.tensors_mut() {
                t.fill(0.0);
            }
            let loss = estimator.accumulate_batch_grads(
                &batch,
                config.l2,
                if config.dropout > 0.0 {
                    Some((config.dropout, &mut dropout_rng))
                } else {
                    None
                },
                &mut grads,
            );
            if !loss.is_finite() {
                return Err(Error::Numeric("pretraining loss diverged (NaN/inf)".into()));
            }
            epoch_loss += loss;
            batches += 1;

            let grad_tensors: Vec<&Mat> = grads.tensors().into_iter().map(|(_, t)| t).collect();
            let params = estimator.params_mut()?;
            opt.step(
                params.tensors_mut().into_iter().map(|(_, t)| t).collect(),
                &grad_tensors,
            );
        }
        let epoch_loss = epoch_loss / batches as f64;
        epoch_losses.push(epoch_loss);
        if epoch_loss + 1e-9 < best {
            best = epoch_loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    estimator.freeze();
    Ok(epoch_losses)
}

/// Verify the analytic pretraining gradients against central finite
/// differences on a small batch; returns the max relative error. Refuses to
/// run on a frozen estimator (the check perturbs parameters).
pub fn tendency_gradient_check(
    estimator: &mut TendencyEstimator,
    items: &[PretrainItem],
    l2: f64,
) -> Result<f64> {
    if estimator.is_frozen() {
        return Err(Error::Frozen);
    }
    let grads = estimator.pretrain_grads(items, l2);
    let analytic = tensor_clones(&grads);
    let aggregation = estimator.aggregation;
    let frozen = estimator.frozen;
    let err = finite_diff_max_rel_error(
        &mut estimator.params,
        &analytic,
        |params| {
            TendencyEstimator::from_parts(params.clone(), frozen, aggregation)
                .pretrain_loss(items, l2)
        },
        1e-5,
    );
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::sigmoid;
    use rand::Rng;

    fn tiny(seed: u64) -> TendencyEstimator {
        TendencyEstimator::new(8, 3, 6, 4, 5, ConceptAggregation::Sum, seed)
    }

    #[test]
    fn zero_params_give_half() {
        let mut est = tiny(0);
        for (_, t) in est.params_mut().unwrap().tensors_mut() {
            t.fill(0.0);
        }
        assert_eq!(est.forward(Some(3), &[0, 2]), 0.5);
        assert_eq!(est.forward(None, &[]), 0.5);
    }

    #[test]
    fn bias_only_output_is_closed_form() {
        let mut est = tiny(0);
        for (_, t) in est.params_mut().unwrap().tensors_mut() {
            t.fill(0.0);
        }
        est.params_mut().unwrap().mlp.b2.data_mut()[0] = 2.0;
        let p = est.forward(Some(0), &[]);
        assert!((p - sigmoid(2.0)).abs() < 1e-12);
        assert!((p - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        let est = tiny(99);
        let q = 5usize;
        let concepts = [0usize, 2];

        // Straight-line oracle with explicit loops.
        let p = est.params();
        let d_q = p.question_emb.cols();
        let d_c = p.concept_emb.cols();
        let mut x = Vec::with_capacity(d_q + d_c);
        x.extend_from_slice(p.question_emb.row(q));
        let mut agg = vec![0.0; d_c];
        for &c in &concepts {
            for (a, v) in agg.iter_mut().zip(p.concept_emb.row(c)) {
                *a += v;
            }
        }
        x.extend_from_slice(&agg);
        let hidden = p.mlp.w1.rows();
        let mut h = vec![0.0; hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut z = p.mlp.b1.data()[j];
            for (k, xv) in x.iter().enumerate() {
                z += p.mlp.w1.row(j)[k] * xv;
            }
            *hj = z.max(0.0);
        }
        let mut logit = p.mlp.b2.data()[0];
        for (j, hv) in h.iter().enumerate() {
            logit += p.mlp.w2.row(0)[j] * hv;
        }
        let oracle = 1.0 / (1.0 + (-logit).exp());

        assert!((est.forward(Some(q), &concepts) - oracle).abs() < 1e-10);
    }

    #[test]
    fn determinism_bit_for_bit() {
        let est = tiny(4);
        let a = est.forward(Some(1), &[0]);
        let b = est.forward(Some(1), &[0]);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn output_stays_in_open_interval_under_extreme_params() {
        let mut est = tiny(0);
        for (_, t) in est.params_mut().unwrap().tensors_mut() {
            t.fill(50.0);
        }
        let p = est.forward(Some(0), &[0, 1, 2]);
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn gradient_check_zero_init_single_question() {
        let mut est = tiny(0);
        for (_, t) in est.params_mut().unwrap().tensors_mut() {
            t.fill(0.0);
        }
        let items = vec![PretrainItem {
            question: 0,
            concepts: vec![1],
            target: 0.8,
        }];
        let err = tendency_gradient_check(&mut est, &items, 0.0).unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn gradient_check_random_params_eight_questions() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..3 {
            let mut est = tiny(100 + trial);
            let items: Vec<PretrainItem> = (0..8)
                .map(|q| PretrainItem {
                    question: q,
                    concepts: vec![rng.gen_range(0..3)],
                    target: rng.gen_range(0.05..0.95),
                })
                .collect();
            let err = tendency_gradient_check(&mut est, &items, 1e-4).unwrap();
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn frozen_estimator_refuses_checks_and_updates() {
        let mut est = tiny(0);
        est.freeze();
        assert!(matches!(est.params_mut(), Err(Error::Frozen)));
        let items = vec![PretrainItem {
            question: 0,
            concepts: vec![],
            target: 0.5,
        }];
        assert!(matches!(
            tendency_gradient_check(&mut est, &items, 0.0),
            Err(Error::Frozen)
        ));
        assert!(matches!(
            pretrain_tendency(&mut est, &items, &TendencyTrainConfig::default()),
            Err(Error::Frozen)
        ));
    }

    #[test]
    fn single_sure_question_converges_high() {
        let mut est = tiny(7);
        let items = vec![PretrainItem {
            question: 0,
            concepts: vec![0],
            target: 1.0,
        }];
        let cfg = TendencyTrainConfig {
            learning_rate: 0.05,
            max_epochs: 800,
            batch_size: 1,
            dropout: 0.0,
            l2: 0.0,
            patience: 800,
            seed: 1,
        };
        pretrain_tendency(&mut est, &items, &cfg).unwrap();
        assert!(est.is_frozen());
        assert!(est.forward(Some(0), &[0]) > 0.95);
    }

    #[test]
    fn shared_concept_questions_reach_their_targets() {
        let mut est = tiny(11);
        let items = vec![
            PretrainItem {
                question: 0,
                concepts: vec![1],
                target: 0.9,
            },
            PretrainItem {
                question: 1,
                concepts: vec![1],
                target: 0.1,
            },
        ];
        let cfg = TendencyTrainConfig {
            learning_rate: 0.05,
            max_epochs: 1500,
            batch_size: 2,
            dropout: 0.0,
            l2: 0.0,
            patience: 1500,
            seed: 2,
        };
        pretrain_tendency(&mut est, &items, &cfg).unwrap();
        assert!((est.forward(Some(0), &[1]) - 0.9).abs() < 0.1);
        assert!((est.forward(Some(1), &[1]) - 0.1).abs() < 0.1);
    }

    #[test]
    fn pretraining_reduces_loss_by_ninety_percent_on_separable_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut est = TendencyEstimator::new(20, 4, 8, 4, 8, ConceptAggregation::Sum, 21);
        // Hard 0/1 targets: fully separable, so the entropy floor is ~0 and
        // the reduction is measurable against the initial loss.
        let items: Vec<PretrainItem> = (0..20)
            .map(|q| PretrainItem {
                question: q,
                concepts: vec![rng.gen_range(0..4)],
                target: f64::from(u8::from(q % 2 == 0)),
            })
            .collect();
        let initial = est.pretrain_loss(&items, 0.0);
        let cfg = TendencyTrainConfig {
            learning_rate: 0.05,
            max_epochs: 1000,
            batch_size: 20,
            dropout: 0.0,
            l2: 0.0,
            patience: 1000,
            seed: 3,
        };
        pretrain_tendency(&mut est, &items, &cfg).unwrap();
        let trained = est.pretrain_loss(&items, 0.0);
        assert!(
            trained < 0.1 * initial,
            "loss only went {initial} -> {trained}"
        );
    }

    #[test]
    fn mean_aggregation_divides_the_concept_term() {
        let mut est = tiny(0);
        for (_, t) in est.params_mut().unwrap().tensors_mut() {
            t.fill(0.0);
        }
        // Distinct concept rows so the aggregate is visible.
        est.params_mut()
            .unwrap()
            .concept_emb
            .row_mut(0)
            .copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        est.params_mut()
            .unwrap()
            .concept_emb
            .row_mut(1)
            .copy_from_slice(&[3.0, 0.0, 0.0, 0.0]);
        let sum_est = est.clone();
        let mean_est =
            TendencyEstimator::from_parts(est.params().clone(), false, ConceptAggregation::Mean);
        let xs = sum_est.question_features(Some(0), &[0, 1]);
        let xm = mean_est.question_features(Some(0), &[0, 1]);
        assert_eq!(xs[6], 4.0);
        assert_eq!(xm[6], 2.0);
    }
}
