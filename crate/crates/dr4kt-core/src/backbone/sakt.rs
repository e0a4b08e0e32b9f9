//! Attention backbone: one causally-masked attention block. The query is
//! the embedded question being asked; keys and values are the past
//! interaction embeddings (plus learned positions). The exposed state for
//! step t is the attended context vector (zero at t = 1, where there is no
//! past and the prediction comes from the question embedding alone).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{dot, embedding_init, xavier, Mat, MlpCache, ParamTensors, SigmoidMlp};

use super::{EncodedSequence, InteractionEmbeddings, SeqGrads, StepPrediction};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaktModel {
    pub emb: InteractionEmbeddings,
    /// Learned positions added to interaction embeddings, max_len x d.
    pub pos: Mat,
    pub w_q: Mat, // d x d
    pub w_k: Mat, // d x d
    pub w_v: Mat, // d x d
    /// Readout over [context, query]; in = 2d.
    pub readout: SigmoidMlp,
}

pub struct SaktCache {
    xs: Vec<Vec<f64>>,      // interaction + position, per step
    queries: Vec<Vec<f64>>, // question-side embedding, per step
    q_proj: Vec<Vec<f64>>,
    k_proj: Vec<Vec<f64>>,
    v_proj: Vec<Vec<f64>>,
    /// Softmax weights over past positions; alphas[t] has length t.
    pub alphas: Vec<Vec<f64>>,
    contexts: Vec<Vec<f64>>,
    readout: Vec<MlpCache>,
}

impl SaktModel {
    pub fn new(
        num_questions: usize,
        num_concepts: usize,
        d_model: usize,
        max_len: usize,
        d_readout: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a_0002);
        let emb = InteractionEmbeddings {
            question: embedding_init(num_questions, d_model, &mut rng),
            concept: embedding_init(num_concepts, d_model, &mut rng),
            response: embedding_init(2, d_model, &mut rng),
            tokens: Default::default(),
        };
        SaktModel {
            emb,
            pos: embedding_init(max_len, d_model, &mut rng),
            w_q: xavier(d_model, d_model, d_model, d_model, &mut rng),
            w_k: xavier(d_model, d_model, d_model, d_model, &mut rng),
            w_v: xavier(d_model, d_model, d_model, d_model, &mut rng),
            readout: SigmoidMlp::new(2 * d_model, d_readout, &mut rng),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.emb.dim()
    }

    pub fn max_len(&self) -> usize {
        self.pos.rows()
    }

    pub fn forward(&self, seq: &EncodedSequence) -> (Vec<StepPrediction>, SaktCache) {
        let d = self.state_dim();
        let t_len = seq.len();
        assert!(
            t_len <= self.max_len(),
            "sequence longer than position table"
        );
        let scale = 1.0 / (d as f64).sqrt();

        let mut cache = SaktCache {
            xs: Vec::with_capacity(t_len),
            queries: Vec::with_capacity(t_len),
            q_proj: Vec::with_capacity(t_len),
            k_proj: Vec::with_capacity(t_len),
            v_proj: Vec::with_capacity(t_len),
            alphas: Vec::with_capacity(t_len),
            contexts: Vec::with_capacity(t_len),
            readout: Vec::with_capacity(t_len),
        };

        for (t, step) in seq.steps.iter().enumerate() {
            let mut x = self.emb.interaction_vec(step);
            for (xv, p) in x.iter_mut().zip(self.pos.row(t)) {
                *xv += p;
            }
            cache.k_proj.push(self.w_k.matvec(&x));
            cache.v_proj.push(self.w_v.matvec(&x));
            cache.xs.push(x);
            cache.queries.push(self.emb.query_vec(step));
        }

        let mut preds = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let q = self.w_q.matvec(&cache.queries[t]);
            let mut context = vec![0.0; d];
            let alphas = if t == 0 {
                Vec::new()
            } else {
                let mut scores: Vec<f64> =
                    (0..t).map(|i| dot(&q, &cache.k_proj[i]) * scale).collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in &mut scores {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for s in &mut scores {
                    *s /= sum;
                }
                for (i, &a) in scores.iter().enumerate() {
                    for (cv, v) in context.iter_mut().zip(&cache.v_proj[i]) {
                        *cv += a * v;
                    }
                }
                scores
            };

            let mut input = context.clone();
            input.extend_from_slice(&cache.queries[t]);
            let ro = self.readout.forward(&input, None);
            preds.push(StepPrediction {
                state: context.clone(),
                logit: ro.logit,
                prob: ro.p,
            });
            cache.q_proj.push(q);
            cache.alphas.push(alphas);
            cache.contexts.push(context);
            cache.readout.push(ro);
        }
        (preds, cache)
    }

    pub fn backward(
        &self,
        seq: &EncodedSequence,
        cache: &SaktCache,
        dlogits: &[f64],
        dstates: Option<&[Vec<f64>]>,
    ) -> SeqGrads {
        let d = self.state_dim();
        let t_len = seq.len();
        assert_eq!(dlogits.len(), t_len);
        let scale = 1.0 / (d as f64).sqrt();

        let mut grads = SeqGrads::new(d, &[]);
        let mut gpos = self.pos.zeros_like();
        let mut gwq = self.w_q.zeros_like();
        let mut gwk = self.w_k.zeros_like();
        let mut gwv = self.w_v.zeros_like();
        let mut ro_grads = self.readout.zero_grads();

        let mut dk = vec![vec![0.0; d]; t_len];
        let mut dv = vec![vec![0.0; d]; t_len];

        for t in 0..t_len {
            // Readout: upstream dlogit plus the predictor path into the
            // exposed state (the attended context).
            let mut dro_in = vec![0.0; 2 * d];
            self.readout.backward(
                &cache.readout[t],
                dlogits[t],
                &mut ro_grads,
                Some(&mut dro_in),
            );
            let mut dcontext = dro_in[..d].to_vec();
            if let Some(ds) = dstates {
                for (dc, v) in dcontext.iter_mut().zip(&ds[t]) {
                    *dc += v;
                }
            }
            let mut dquery = dro_in[d..].to_vec();

            // Attention backward (t = 0 has no past; context was zero).
            if t > 0 {
                let alphas = &cache.alphas[t];
                let mut dalpha = vec![0.0; t];
                for i in 0..t {
                    dalpha[i] = dot(&dcontext, &cache.v_proj[i]);
                    for (dvi, c) in dv[i].iter_mut().zip(&dcontext) {
                        *dvi += alphas[i] * c;
                    }
                }
                let weighted: f64 = alphas.iter().zip(&dalpha).map(|(a, da)| a * da).sum();
                let mut dq = vec![0.0; d];
                for i in 0..t {
                    let dscore = alphas[i] * (dalpha[i] - weighted);
                    let ds_scaled = dscore * scale;
                    for (dqv, k) in dq.iter_mut().zip(&cache.k_proj[i]) {
                        *dqv += ds_scaled * k;
                    }
                    for (dkv, qv) in dk[i].iter_mut().zip(&cache.q_proj[t]) {
                        *dkv += ds_scaled * qv;
                    }
                }
                gwq.add_outer(&dq, &cache.queries[t]);
                self.w_q.tmatvec_acc(&dq, &mut dquery);
            }

            grads.add_query_grad(&seq.steps[t], &dquery, d, self.emb.uses_question());
        }

        // Key/value projections and their inputs.
        for i in 0..t_len {
            let touched = dk[i].iter().any(|&v| v != 0.0) || dv[i].iter().any(|&v| v != 0.0);
            if !touched {
                continue;
            }
            gwk.add_outer(&dk[i], &cache.xs[i]);
            gwv.add_outer(&dv[i], &cache.xs[i]);
            let mut dx = vec![0.0; d];
            self.w_k.tmatvec_acc(&dk[i], &mut dx);
            self.w_v.tmatvec_acc(&dv[i], &mut dx);
            grads.add_interaction_grad(&seq.steps[i], &dx, d, self.emb.uses_question());
            for (g, v) in gpos.row_mut(i).iter_mut().zip(&dx) {
                *g += v;
            }
        }

        grads.dense = vec![
            gpos,
            gwq,
            gwk,
            gwv,
            ro_grads.w1,
            ro_grads.b1,
            ro_grads.w2,
            ro_grads.b2,
        ];
        grads
    }
}

impl ParamTensors for SaktModel {
    fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("emb.question", &self.emb.question),
            ("emb.concept", &self.emb.concept),
            ("emb.response", &self.emb.response),
            ("pos", &self.pos),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("readout.w1", &self.readout.w1),
            ("readout.b1", &self.readout.b1),
            ("readout.w2", &self.readout.w2),
            ("readout.b2", &self.readout.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        vec![
            ("emb.question", &mut self.emb.question),
            ("emb.concept", &mut self.emb.concept),
            ("emb.response", &mut self.emb.response),
            ("pos", &mut self.pos),
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("readout.w1", &mut self.readout.w1),
            ("readout.b1", &mut self.readout.b1),
            ("readout.w2", &mut self.readout.w2),
            ("readout.b2", &mut self.readout.b2),
        ]
    }
}
