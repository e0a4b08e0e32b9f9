//! Model-agnostic knowledge-tracing experiment framework with
//! discrimination rebalancing: measures how unevenly informative student
//! responses are, reweights training toward the discriminative ones, and
//! fuses backbone predictions with question tendency scores at serve time.
//!
//! Modules follow the pipeline order: [`dataset`] ingestion and statistics,
//! [`tendency`] (stage-I question tendency estimator), [`rebalance`]
//! (discrimination scores, loss weights, reweighted BCE, IPW baseline),
//! [`backbone`] (pluggable sequence models), [`fusion`] (discrimination
//! predictor and score fusion), [`training`] (two-stage orchestration),
//! [`eval`] (metrics and level reports), and [`synth`] (calibrated corpus
//! generator for desk-scale experiments).

pub mod backbone;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod nn;
pub mod par;
pub mod rebalance;
pub mod report;
pub mod synth;
pub mod tendency;
pub mod training;

pub use error::{Error, Result};
