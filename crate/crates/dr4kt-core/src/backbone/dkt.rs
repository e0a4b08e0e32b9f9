//! Recurrent backbone: an LSTM cell over interaction embeddings with an
//! MLP readout conditioned on the queried question.
//!
//! The state exposed for step t is the hidden vector BEFORE consuming step
//! t's response (zero at t = 1), so predictions condition only on history
//! plus the queried question's identity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{embedding_init, xavier, Mat, MlpCache, ParamTensors, SigmoidMlp};

use super::{EncodedSequence, EncodedStep, InteractionEmbeddings, SeqGrads, StepPrediction};

/// Gate sections in the 4h-row LSTM weight layout.
const GATES: usize = 4; // input, forget, cell, output

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DktModel {
    pub emb: InteractionEmbeddings,
    /// 4h x d_e input weights, gate order [input; forget; cell; output].
    pub w_x: Mat,
    /// 4h x h recurrent weights.
    pub w_h: Mat,
    /// 1 x 4h bias (forget section initialized to 1).
    pub b: Mat,
    /// Readout over [state, query]; in = h + d_e.
    pub readout: SigmoidMlp,
}

/// Carried state for incremental evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct DktState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

pub struct DktCache {
    queries: Vec<Vec<f64>>,
    xs: Vec<Vec<f64>>,
    /// Activated gates per step: [i, f, g, o].
    gates: Vec<[Vec<f64>; GATES]>,
    /// states[t] / cells[t] = hidden/cell AFTER consuming t interactions;
    /// index 0 holds the zero initial state.
    states: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    /// tanh(cells[t + 1]) per step t.
    tanh_cells: Vec<Vec<f64>>,
    readout: Vec<MlpCache>,
}

impl DktModel {
    pub fn new(
        num_questions: usize,
        num_concepts: usize,
        d_e: usize,
        d_h: usize,
        d_readout: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd7_0001);
        let emb = InteractionEmbeddings {
            question: embedding_init(num_questions, d_e, &mut rng),
            concept: embedding_init(num_concepts, d_e, &mut rng),
            response: embedding_init(2, d_e, &mut rng),
            tokens: Default::default(),
        };
        let w_x = xavier(GATES * d_h, d_e, d_e, d_h, &mut rng);
        let w_h = xavier(GATES * d_h, d_h, d_h, d_h, &mut rng);
        let mut b = Mat::zeros(1, GATES * d_h);
        // Forget-gate bias starts at 1 so early training keeps memory open.
        for v in &mut b.data_mut()[d_h..2 * d_h] {
            *v = 1.0;
        }
        DktModel {
            emb,
            w_x,
            w_h,
            b,
            readout: SigmoidMlp::new(d_h + d_e, d_readout, &mut rng),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.w_h.cols()
    }

    pub fn init_state(&self) -> DktState {
        DktState {
            h: vec![0.0; self.state_dim()],
            c: vec![0.0; self.state_dim()],
        }
    }

    /// Predict the queried question from the carried state without
    /// consuming the response.
    pub fn predict(&self, state: &DktState, step: &EncodedStep) -> StepPrediction {
        let query = self.emb.query_vec(step);
        let mut input = state.h.clone();
        input.extend_from_slice(&query);
        let cache = self.readout.forward(&input, None);
        StepPrediction {
            state: state.h.clone(),
            logit: cache.logit,
            prob: cache.p,
        }
    }

    /// Consume one interaction, advancing the carried state.
    pub fn advance(&self, state: &mut DktState, step: &EncodedStep) {
        let x = self.emb.interaction_vec(step);
        let (i, f, g, o) = self.gate_activations(&x, &state.h);
        let h_dim = self.state_dim();
        for j in 0..h_dim {
            state.c[j] = f[j] * state.c[j] + i[j] * g[j];
            state.h[j] = o[j] * state.c[j].tanh();
        }
    }

    fn gate_activations(
        &self,
        x: &[f64],
        h_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let h_dim = self.state_dim();
        let mut z = self.w_x.matvec(x);
        let zh = self.w_h.matvec(h_prev);
        for ((zv, zhv), bv) in z.iter_mut().zip(&zh).zip(self.b.data()) {
            *zv += zhv + bv;
        }
        let sig = crate::nn::sigmoid;
        let i: Vec<f64> = z[..h_dim].iter().map(|&v| sig(v)).collect();
        let f: Vec<f64> = z[h_dim..2 * h_dim].iter().map(|&v| sig(v)).collect();
        let g: Vec<f64> = z[2 * h_dim..3 * h_dim].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * h_dim..].iter().map(|&v| sig(v)).collect();
        (i, f, g, o)
    }

    pub fn forward(&self, seq: &EncodedSequence) -> (Vec<StepPrediction>, DktCache) {
        let h_dim = self.state_dim();
        let t_len = seq.len();
        let mut cache = DktCache {
            queries: Vec::with_capacity(t_len),
            xs: Vec::with_capacity(t_len),
            gates: Vec::with_capacity(t_len),
            states: Vec::with_capacity(t_len + 1),
            cells: Vec::with_capacity(t_len + 1),
            tanh_cells: Vec::with_capacity(t_len),
            readout: Vec::with_capacity(t_len),
        };
        cache.states.push(vec![0.0; h_dim]);
        cache.cells.push(vec![0.0; h_dim]);

        let mut preds = Vec::with_capacity(t_len);
        for (t, step) in seq.steps.iter().enumerate() {
            let query = self.emb.query_vec(step);
            let h_prev = cache.states[t].clone();

            let mut input = h_prev.clone();
            input.extend_from_slice(&query);
            let ro = self.readout.forward(&input, None);
            preds.push(StepPrediction {
                state: h_prev.clone(),
                logit: ro.logit,
                prob: ro.p,
            });

            let x = self.emb.interaction_vec(step);
            let (i, f, g, o) = self.gate_activations(&x, &h_prev);
            let c_prev = &cache.cells[t];
            let mut c_new = vec![0.0; h_dim];
            let mut h_new = vec![0.0; h_dim];
            let mut tanh_c = vec![0.0; h_dim];
            for j in 0..h_dim {
                c_new[j] = f[j] * c_prev[j] + i[j] * g[j];
                tanh_c[j] = c_new[j].tanh();
                h_new[j] = o[j] * tanh_c[j];
            }
            cache.queries.push(query);
            cache.xs.push(x);
            cache.gates.push([i, f, g, o]);
            cache.states.push(h_new);
            cache.cells.push(c_new);
            cache.tanh_cells.push(tanh_c);
            cache.readout.push(ro);
        }
        (preds, cache)
    }

    pub fn backward(
        &self,
        seq: &EncodedSequence,
        cache: &DktCache,
        dlogits: &[f64],
        dstates: Option<&[Vec<f64>]>,
    ) -> SeqGrads {
        let h_dim = self.state_dim();
        let d_e = self.emb.dim();
        let t_len = seq.len();
        assert_eq!(dlogits.len(), t_len);

        let mut grads = SeqGrads::new(d_e, &[]);
        let mut gwx = self.w_x.zeros_like();
        let mut gwh = self.w_h.zeros_like();
        let mut gb = self.b.zeros_like();
        let mut ro_grads = self.readout.zero_grads();

        // dh_next/dc_next: gradients wrt states[t+1]/cells[t+1].
        let mut dh_next = vec![0.0; h_dim];
        let mut dc_next = vec![0.0; h_dim];

        for t in (0..t_len).rev() {
            let step = &seq.steps[t];
            let [i, f, g, o] = &cache.gates[t];
            let tanh_c = &cache.tanh_cells[t];
            let c_prev = &cache.cells[t];
            let h_prev = &cache.states[t];

            // Cell t backward: consumes grads on states[t+1]/cells[t+1].
            let mut dz = vec![0.0; GATES * h_dim];
            let mut dc_prev = vec![0.0; h_dim];
            for j in 0..h_dim {
                let do_ = dh_next[j] * tanh_c[j];
                let dc_total = dc_next[j] + dh_next[j] * o[j] * (1.0 - tanh_c[j] * tanh_c[j]);
                let di = dc_total * g[j];
                let df = dc_total * c_prev[j];
                let dg = dc_total * i[j];
                dc_prev[j] = dc_total * f[j];
                dz[j] = di * i[j] * (1.0 - i[j]);
                dz[h_dim + j] = df * f[j] * (1.0 - f[j]);
                dz[2 * h_dim + j] = dg * (1.0 - g[j] * g[j]);
                dz[3 * h_dim + j] = do_ * o[j] * (1.0 - o[j]);
            }
            gwx.add_outer(&dz, &cache.xs[t]);
            gwh.add_outer(&dz, h_prev);
            for (b, d) in gb.data_mut().iter_mut().zip(&dz) {
                *b += d;
            }
            let mut dx = vec![0.0; d_e];
            self.w_x.tmatvec_acc(&dz, &mut dx);
            grads.add_interaction_grad(step, &dx, d_e, self.emb.uses_question());

            let mut dh_cur = vec![0.0; h_dim];
            self.w_h.tmatvec_acc(&dz, &mut dh_cur);

            // Prediction at t consumed states[t] through the readout.
            let mut dro_in = vec![0.0; h_dim + d_e];
            self.readout.backward(
                &cache.readout[t],
                dlogits[t],
                &mut ro_grads,
                Some(&mut dro_in),
            );
            for (dh, d) in dh_cur.iter_mut().zip(&dro_in[..h_dim]) {
                *dh += d;
            }
            grads.add_query_grad(step, &dro_in[h_dim..], d_e, self.emb.uses_question());

            // Discrimination-predictor path into the exposed state.
            if let Some(ds) = dstates {
                for (dh, d) in dh_cur.iter_mut().zip(&ds[t]) {
                    *dh += d;
                }
            }

            dh_next = dh_cur;
            dc_next = dc_prev;
        }

        grads.dense = vec![
            gwx,
            gwh,
            gb,
            ro_grads.w1,
            ro_grads.b1,
            ro_grads.w2,
            ro_grads.b2,
        ];
        grads
    }
}

impl ParamTensors for DktModel {
    fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("emb.question", &self.emb.question),
            ("emb.concept", &self.emb.concept),
            ("emb.response", &self.emb.response),
            ("w_x", &self.w_x),
            ("w_h", &self.w_h),
            ("b", &self.b),
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
            ("w_x", &mut self.w_x),
            ("w_h", &mut self.w_h),
            ("b", &mut self.b),
            ("readout.w1", &mut self.readout.w1),
            ("readout.b1", &mut self.readout.b1),
            ("readout.w2", &mut self.readout.w2),
            ("readout.b2", &mut self.readout.b2),
        ]
    }
}
