//! Interaction-log ingestion, question/concept incidence, sequence
//! segmentation and splitting, and the empirical response statistics
//! (pass rates, discrimination, histograms) the rest of the pipeline
//! builds on.
//!
//! Conventions:
//! - ids are opaque strings; index assignment is always by sorted id so any
//!   two loads of the same data agree.
//! - pass rates and empirical discrimination are computed on the train
//!   split only, and test-time binning reuses those train-derived numbers
//!   (no label leakage from validation/test).

pub mod canonical;
pub mod loader;
pub mod qmatrix;
pub mod segment;
pub mod stats;

pub use canonical::{
    read_pass_rates_csv, read_qmatrix_csv, read_sequences_jsonl, write_histogram_csv,
    write_pass_rates_csv, write_qmatrix_csv, write_sequences_jsonl,
};
pub use loader::{load_interaction_log, CsvSchema, LoadOutcome};
pub use qmatrix::{build_q_matrix, QMatrix, UNKNOWN_CONCEPT};
pub use segment::{segment_sequences, split_sequences, DataSplit};
pub use stats::{
    discrimination_bin, discrimination_histogram, empirical_discrimination, question_pass_rate,
    question_pass_rate_seq, Histogram, QuestionStats, HISTOGRAM_BINS, MIN_QUESTION_COUNT,
};

use serde::{Deserialize, Serialize};

/// One student-question interaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub student_id: String,
    pub question_id: String,
    /// Binary correctness, 0 or 1.
    pub correctness: u8,
    /// Ordering key within a student; normalized to the record's position in
    /// the student's chronologically sorted stream.
    pub order_key: i64,
    /// Concept labels attached to this row (may be empty).
    pub concepts: Vec<String>,
}

/// An ordered run of one student's responses after segmentation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub student_id: String,
    /// Index of this chunk within the student's stream.
    pub chunk: usize,
    pub responses: Vec<ResponseRecord>,
}

impl InteractionSequence {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Stable identifier used in prediction dumps.
    pub fn sequence_id(&self) -> String {
        format!("{}#{}", self.student_id, self.chunk)
    }
}
