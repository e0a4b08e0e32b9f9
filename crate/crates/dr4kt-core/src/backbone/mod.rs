//! Pluggable knowledge-tracing backbones.
//!
//! A backbone consumes a student's interaction sequence and emits, at every
//! step t, a correctness probability for question t plus a knowledge-state
//! vector. The state exposed for step t is the state BEFORE consuming step
//! t's response, so downstream consumers never see the label being
//! predicted; the causality contract (outputs at t are invariant to anything
//! at positions >= t except question t's identity) is tested for both
//! shipped backbones.
//!
//! Two backbones ship: a recurrent one ([`dkt`], LSTM cell) and an
//! attention one ([`sakt`], single causally-masked attention block). Adding
//! another (e.g. monotonic-attention or learning/forgetting-gate variants)
//! means implementing the same forward/backward surface and extending
//! [`BackboneKind`] and [`BackboneModel`]; the training loop is generic over
//! the enum and needs no changes.

pub mod dkt;
pub mod sakt;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::finite_diff_max_rel_error;
use crate::nn::{clamp_prob, Mat, ParamTensors};

pub use dkt::{DktModel, DktState};
pub use sakt::SaktModel;

/// One encoded interaction: question/concept indices plus the label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedStep {
    /// `None` for questions unseen at preparation time (cold-question path:
    /// zero id embedding, concept term only).
    pub question: Option<usize>,
    pub concepts: Vec<usize>,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub id: String,
    pub steps: Vec<EncodedStep>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Per-step backbone output.
#[derive(Clone, Debug)]
pub struct StepPrediction {
    /// Knowledge-state vector for this step (dimension `state_dim`).
    pub state: Vec<f64>,
    pub logit: f64,
    /// Clamped probability in (0,1).
    pub prob: f64,
}

/// Token granularity of the backbone's embeddings. The classic recurrent
/// and attention baselines consume concept-level tokens (question identity
/// is invisible to them, which is exactly the gap score fusion fills);
/// question-level tokens add a per-question embedding on top.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenGranularity {
    #[default]
    Question,
    Concept,
}

/// Question/concept/response embedding tables shared by both backbones.
///
/// A step's query vector is its question embedding (zeros when cold, or
/// always at concept granularity) plus the sum of its concept rows; the
/// interaction vector adds a per-label response offset on top.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteractionEmbeddings {
    pub question: Mat, // |Q| x d
    pub concept: Mat,  // |C| x d
    pub response: Mat, // 2 x d
    #[serde(default)]
    pub tokens: TokenGranularity,
}

impl InteractionEmbeddings {
    pub fn dim(&self) -> usize {
        self.question.cols()
    }

    pub(crate) fn uses_question(&self) -> bool {
        self.tokens == TokenGranularity::Question
    }

    pub fn query_vec(&self, step: &EncodedStep) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.add_query_into(step, &mut v);
        v
    }

    fn add_query_into(&self, step: &EncodedStep, v: &mut [f64]) {
        if self.uses_question() {
            if let Some(q) = step.question {
                for (o, e) in v.iter_mut().zip(self.question.row(q)) {
                    *o += e;
                }
            }
        }
        for &c in &step.concepts {
            for (o, e) in v.iter_mut().zip(self.concept.row(c)) {
                *o += e;
            }
        }
    }

    pub fn interaction_vec(&self, step: &EncodedStep) -> Vec<f64> {
        let mut v = self.query_vec(step);
        for (o, e) in v.iter_mut().zip(self.response.row(step.label as usize)) {
            *o += e;
        }
        v
    }
}

/// Per-sequence gradients: embedding rows are sparse (a sequence touches at
/// most a few dozen), backbone-specific tensors are dense in the order the
/// model's `tensors()` lists them after the three embedding tables.
#[derive(Clone, Debug)]
pub struct SeqGrads {
    pub question_rows: BTreeMap<usize, Vec<f64>>,
    pub concept_rows: BTreeMap<usize, Vec<f64>>,
    pub response: Mat,
    pub dense: Vec<Mat>,
}

impl SeqGrads {
    fn new(dim: usize, dense_shapes: &[(usize, usize)]) -> Self {
        SeqGrads {
            question_rows: BTreeMap::new(),
            concept_rows: BTreeMap::new(),
            response: Mat::zeros(2, dim),
            dense: dense_shapes
                .iter()
                .map(|&(r, c)| Mat::zeros(r, c))
                .collect(),
        }
    }

    fn add_query_grad(&mut self, step: &EncodedStep, d: &[f64], dim: usize, use_question: bool) {
        if use_question {
            if let Some(q) = step.question {
                let row = self
                    .question_rows
                    .entry(q)
                    .or_insert_with(|| vec![0.0; dim]);
                for (g, v) in row.iter_mut().zip(d) {
                    *g += v;
                }
            }
        }
        for &c in &step.concepts {
            let row = self.concept_rows.entry(c).or_insert_with(|| vec![0.0; dim]);
            for (g, v) in row.iter_mut().zip(d) {
                *g += v;
            }
        }
    }

    fn add_interaction_grad(
        &mut self,
        step: &EncodedStep,
        d: &[f64],
        dim: usize,
        use_question: bool,
    ) {
        self.add_query_grad(step, d, dim, use_question);
        let row = self.response.row_mut(step.label as usize);
        for (g, v) in row.iter_mut().zip(d) {
            *g += v;
        }
    }
}

/// Which backbone architecture a config requests. Monotonic-attention and
/// learning/forgetting-gate variants are declared extension points; asking
/// for one yields a config error that says so.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Dkt,
    Sakt,
    Akt,
    Lpkt,
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BackboneKind::Dkt => "dkt",
            BackboneKind::Sakt => "sakt",
            BackboneKind::Akt => "akt",
            BackboneKind::Lpkt => "lpkt",
        };
        f.write_str(s)
    }
}

/// A concrete backbone instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum BackboneModel {
    Dkt(DktModel),
    Sakt(SaktModel),
}

/// Opaque forward cache handed back to `backward`.
pub enum ForwardCache {
    Dkt(dkt::DktCache),
    Sakt(sakt::SaktCache),
}

impl BackboneModel {
    pub fn kind(&self) -> BackboneKind {
        match self {
            BackboneModel::Dkt(_) => BackboneKind::Dkt,
            BackboneModel::Sakt(_) => BackboneKind::Sakt,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            BackboneModel::Dkt(m) => m.state_dim(),
            BackboneModel::Sakt(m) => m.state_dim(),
        }
    }

    pub fn forward(&self, seq: &EncodedSequence) -> (Vec<StepPrediction>, ForwardCache) {
        match self {
            BackboneModel::Dkt(m) => {
                let (p, c) = m.forward(seq);
                (p, ForwardCache::Dkt(c))
            }
            BackboneModel::Sakt(m) => {
                let (p, c) = m.forward(seq);
                (p, ForwardCache::Sakt(c))
            }
        }
    }

    /// Backward pass. `dlogits[t]` is dLoss/dlogit_t; `dstates[t]`, when
    /// present, is dLoss/dstate_t flowing in from the discrimination
    /// predictor.
    pub fn backward(
        &self,
        seq: &EncodedSequence,
        cache: &ForwardCache,
        dlogits: &[f64],
        dstates: Option<&[Vec<f64>]>,
    ) -> SeqGrads {
        match (self, cache) {
            (BackboneModel::Dkt(m), ForwardCache::Dkt(c)) => m.backward(seq, c, dlogits, dstates),
            (BackboneModel::Sakt(m), ForwardCache::Sakt(c)) => m.backward(seq, c, dlogits, dstates),
            _ => panic!("forward cache does not match backbone kind"),
        }
    }

    /// A zeroed same-shape model usable as a dense gradient accumulator.
    pub fn zeros_like(&self) -> BackboneModel {
        let mut clone = self.clone();
        for (_, t) in clone.tensors_mut() {
            t.fill(0.0);
        }
        clone
    }

    /// Fold one sequence's sparse gradients into a dense accumulator
    /// produced by [`Self::zeros_like`].
    pub fn add_seq_grads(accum: &mut BackboneModel, g: &SeqGrads) {
        let mut tensors = accum.tensors_mut();
        // Tensor order contract: question, concept, response, then dense.
        for (q, row) in &g.question_rows {
            let dst = tensors[0].1.row_mut(*q);
            for (d, v) in dst.iter_mut().zip(row) {
                *d += v;
            }
        }
        for (c, row) in &g.concept_rows {
            let dst = tensors[1].1.row_mut(*c);
            for (d, v) in dst.iter_mut().zip(row) {
                *d += v;
            }
        }
        tensors[2].1.add_assign(&g.response);
        for (k, dense) in g.dense.iter().enumerate() {
            tensors[3 + k].1.add_assign(dense);
        }
    }
}

impl ParamTensors for BackboneModel {
    fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        match self {
            BackboneModel::Dkt(m) => m.tensors(),
            BackboneModel::Sakt(m) => m.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        match self {
            BackboneModel::Dkt(m) => m.tensors_mut(),
            BackboneModel::Sakt(m) => m.tensors_mut(),
        }
    }
}

/// Mean unweighted BCE of a backbone over one sequence; the loss used by
/// the gradient check.
pub fn sequence_bce(model: &BackboneModel, seq: &EncodedSequence) -> f64 {
    let (preds, _) = model.forward(seq);
    let mut sum = 0.0;
    for (p, step) in preds.iter().zip(&seq.steps) {
        let prob = clamp_prob(p.prob);
        sum += if step.label == 1 {
            -prob.ln()
        } else {
            -(1.0 - prob).ln()
        };
    }
    sum / seq.len() as f64
}

/// Analytic-vs-finite-difference check of the full unrolled model on a short
/// sequence; returns the maximum relative gradient error.
pub fn backbone_gradient_check(model: &mut BackboneModel, seq: &EncodedSequence) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::Data(
            "gradient check needs a non-empty sequence".into(),
        ));
    }
    let (preds, cache) = model.forward(seq);
    let n = seq.len() as f64;
    let dlogits: Vec<f64> = preds
        .iter()
        .zip(&seq.steps)
        .map(|(p, s)| (p.prob - f64::from(s.label)) / n)
        .collect();
    let seq_grads = model.backward(seq, &cache, &dlogits, None);

    let mut accum = model.zeros_like();
    BackboneModel::add_seq_grads(&mut accum, &seq_grads);
    let analytic: Vec<Mat> = accum
        .tensors()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();

    Ok(finite_diff_max_rel_error(
        model,
        &analytic,
        |m| sequence_bce(m, seq),
        1e-5,
    ))
}
