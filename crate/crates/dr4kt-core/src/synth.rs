//! Synthetic interaction-log generator calibrated to the public
//! ASSISTments 2009-10 corpus statistics (response volume, question and
//! concept counts, concepts per question, pass-rate imbalance), so the full
//! pipeline can run at desk scale when the original CSV is not on disk.
//!
//! The latent response model has the ingredients the framework is built to
//! exploit: per-student per-concept ability, a practice effect that makes
//! histories informative, heterogeneous question difficulty (the source of
//! the discrimination imbalance), and guess/slip noise floors.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use std::io::Write;
use std::path::Path;

use crate::dataset::{InteractionSequence, ResponseRecord};
use crate::error::{Error, Result};

/// Generator scale and latent-model constants.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub students: usize,
    pub questions: usize,
    pub concepts: usize,
    pub seed: u64,
    /// Log-normal parameters of per-student response counts.
    pub len_mu: f64,
    pub len_sigma: f64,
    pub max_responses_per_student: usize,
    /// Share of questions carrying a second concept.
    pub two_concept_share: f64,
    /// Question difficulty: a concept-level component plus a per-question
    /// residual (the part only question identity can explain).
    pub difficulty_mean: f64,
    pub concept_difficulty_sd: f64,
    pub difficulty_sd: f64,
    /// Log-mean and log-sd of the per-question slope.
    pub slope_log_mean: f64,
    pub slope_log_sd: f64,
    /// Student ability spread (shared and per-concept parts).
    pub ability_sd: f64,
    pub concept_ability_sd: f64,
    /// Mastery gain per log-practice unit.
    pub practice_gain: f64,
    pub guess: f64,
    pub slip: f64,
    /// Zipf exponents for concept popularity and within-concept question
    /// popularity.
    pub concept_zipf: f64,
    pub question_zipf: f64,
}

impl SynthConfig {
    /// Desk-scale corpus matching the ASSISTments 2009-10 preprocessing
    /// statistics: ~113.5k kept responses, ~8.3k sequences, 5.7k questions,
    /// 195 concepts, ~1.18 concepts per question.
    pub fn full(seed: u64) -> Self {
        SynthConfig {
            students: 11800,
            questions: 5700,
            concepts: 195,
            seed,
            len_mu: 2.0,
            len_sigma: 0.85,
            max_responses_per_student: 400,
            two_concept_share: 0.18,
            difficulty_mean: -0.55,
            concept_difficulty_sd: 2.0,
            difficulty_sd: 1.0,
            slope_log_mean: 0.2,
            slope_log_sd: 0.25,
            ability_sd: 1.0,
            concept_ability_sd: 0.7,
            practice_gain: 0.5,
            guess: 0.08,
            slip: 0.04,
            concept_zipf: 0.8,
            question_zipf: 0.8,
        }
    }

    /// Fixture-scale corpus for fast tests (a few thousand responses).
    pub fn small(seed: u64) -> Self {
        SynthConfig {
            students: 420,
            questions: 300,
            concepts: 25,
            ..SynthConfig::full(seed)
        }
    }
}

/// One raw CSV row in the assistments-style layout.
#[derive(Clone, Debug)]
pub struct RawRow {
    pub user_id: String,
    pub problem_id: String,
    pub skill_id: String,
    pub correct: u8,
    pub order_id: u64,
}

struct QuestionSpec {
    concepts: Vec<usize>,
    difficulty: f64,
    slope: f64,
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (0..n)
        .map(|i| 1.0 / ((i + 1) as f64).powf(exponent))
        .collect()
}

fn sample_weighted(cum: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cum.last().expect("non-empty weights");
    let x = rng.gen_range(0.0..total);
    match cum.binary_search_by(|v| v.partial_cmp(&x).expect("finite")) {
        Ok(i) => i + 1,
        Err(i) => i,
    }
    .min(cum.len() - 1)
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cum.push(acc);
    }
    cum
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generate raw rows. With a fixed config and seed the output is
/// byte-for-byte reproducible.
pub fn generate(cfg: &SynthConfig) -> Vec<RawRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_eded);
    let difficulty = Normal::new(cfg.difficulty_mean, cfg.difficulty_sd).expect("valid normal");
    let slope = LogNormal::new(cfg.slope_log_mean, cfg.slope_log_sd).expect("valid lognormal");
    let lengths = LogNormal::new(cfg.len_mu, cfg.len_sigma).expect("valid lognormal");
    let ability = Normal::new(0.0, cfg.ability_sd).expect("valid normal");
    let concept_ability = Normal::new(0.0, cfg.concept_ability_sd).expect("valid normal");

    // Questions: primary concept by Zipf popularity, optional second
    // concept, difficulty and slope.
    let concept_cum = cumulative(&zipf_weights(cfg.concepts, cfg.concept_zipf));
    let concept_difficulty_dist =
        Normal::new(0.0, cfg.concept_difficulty_sd).expect("valid normal");
    let concept_difficulty: Vec<f64> = (0..cfg.concepts)
        .map(|_| concept_difficulty_dist.sample(&mut rng))
        .collect();
    let mut questions = Vec::with_capacity(cfg.questions);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); cfg.concepts];
    for q in 0..cfg.questions {
        let primary = sample_weighted(&concept_cum, &mut rng);
        let mut concepts = vec![primary];
        if rng.gen::<f64>() < cfg.two_concept_share {
            let second = sample_weighted(&concept_cum, &mut rng);
            if second != primary {
                concepts.push(second);
            }
        }
        pools[primary].push(q);
        questions.push(QuestionSpec {
            concepts,
            difficulty: concept_difficulty[primary] + difficulty.sample(&mut rng),
            slope: slope.sample(&mut rng),
        });
    }
    // Concepts that attracted no questions fall back to the largest pool.
    let fallback = (0..cfg.concepts)
        .max_by_key(|&c| pools[c].len())
        .expect("at least one concept");
    let pool_cums: Vec<(usize, Vec<f64>)> = (0..cfg.concepts)
        .map(|c| {
            let pool = if pools[c].is_empty() { fallback } else { c };
            (
                pool,
                cumulative(&zipf_weights(pools[pool].len(), cfg.question_zipf)),
            )
        })
        .collect();

    let mut rows = Vec::new();
    for u in 0..cfg.students {
        let n: usize =
            (lengths.sample(&mut rng).round() as usize).clamp(1, cfg.max_responses_per_student);
        let g = ability.sample(&mut rng);
        let mut theta: Vec<Option<f64>> = vec![None; cfg.concepts];
        let mut practice = vec![0u32; cfg.concepts];

        let mut emitted = 0usize;
        let mut order = 0u64;
        while emitted < n {
            // One working session: a handful of questions on one concept.
            let session_concept = sample_weighted(&concept_cum, &mut rng);
            let (pool_concept, pool_cum) = &pool_cums[session_concept];
            let session_len = rng.gen_range(3..=12).min(n - emitted);
            for _ in 0..session_len {
                let q = pools[*pool_concept][sample_weighted(pool_cum, &mut rng)];
                let spec = &questions[q];
                let mut skill = 0.0;
                for &c in &spec.concepts {
                    let th = *theta[c].get_or_insert_with(|| g + concept_ability.sample(&mut rng));
                    skill += th + cfg.practice_gain * (1.0 + f64::from(practice[c])).ln();
                }
                skill /= spec.concepts.len() as f64;
                let p = cfg.guess
                    + (1.0 - cfg.guess - cfg.slip)
                        * sigmoid(spec.slope * (skill - spec.difficulty));
                let correct = u8::from(rng.gen::<f64>() < p);
                for &c in &spec.concepts {
                    practice[c] += 1;
                }
                rows.push(RawRow {
                    user_id: format!("s{u:05}"),
                    problem_id: format!("p{q:04}"),
                    skill_id: spec
                        .concepts
                        .iter()
                        .map(|c| format!("k{c:03}"))
                        .collect::<Vec<_>>()
                        .join("_"),
                    correct,
                    order_id: order,
                });
                order += 1;
                emitted += 1;
            }
        }
    }
    rows
}

/// Write rows in the assistments-style CSV layout
/// (user_id, problem_id, skill_id, correct, order_id).
pub fn write_csv(path: &Path, rows: &[RawRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "user_id,problem_id,skill_id,correct,order_id").map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.user_id, r.problem_id, r.skill_id, r.correct, r.order_id
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A tiny corpus with a deterministic generating rule ("every response
/// repeats the student's first label"), used by the overfit-capability
/// tests: a sequence model that reads history can reach perfect accuracy
/// from step 2 on.
pub fn deterministic_rule_corpus(
    n_students: usize,
    len: usize,
    n_questions: usize,
) -> Vec<InteractionSequence> {
    (0..n_students)
        .map(|u| {
            let label = (u % 2) as u8;
            InteractionSequence {
                student_id: format!("d{u:03}"),
                chunk: 0,
                responses: (0..len)
                    .map(|t| ResponseRecord {
                        student_id: format!("d{u:03}"),
                        question_id: format!("p{:02}", (u + 3 * t) % n_questions),
                        correctness: label,
                        order_key: t as i64,
                        concepts: vec![format!("k{}", (u + 3 * t) % 5)],
                    })
                    .collect(),
            }
        })
        .collect()
}
