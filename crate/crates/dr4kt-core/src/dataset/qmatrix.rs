//! Binary question-to-concept incidence with deterministic index maps.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ResponseRecord;

/// Reserved concept id assigned to questions that carry no concept label.
pub const UNKNOWN_CONCEPT: &str = "__unknown__";

/// Sparse binary |Q| x |C| incidence matrix plus id/index maps. The reserved
/// unknown-concept column is always present as the last column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QMatrix {
    questions: Vec<String>,
    concepts: Vec<String>,
    /// Sorted concept indices per question row; every row is non-empty.
    rows: Vec<Vec<usize>>,
    #[serde(skip)]
    q_index: BTreeMap<String, usize>,
}

impl QMatrix {
    /// Number of question rows.
    pub fn num_questions(&self) -> usize {
        self.questions.len()
    }

    /// Number of concept columns, including the reserved unknown column.
    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn unknown_concept_index(&self) -> usize {
        self.concepts.len() - 1
    }

    pub fn question_ids(&self) -> &[String] {
        &self.questions
    }

    pub fn concept_ids(&self) -> &[String] {
        &self.concepts
    }

    pub fn question_index(&self, id: &str) -> Option<usize> {
        self.q_index.get(id).copied()
    }

    pub fn question_id(&self, index: usize) -> &str {
        &self.questions[index]
    }

    /// Concept indices of a question row (sorted, at least one entry).
    pub fn row(&self, question: usize) -> &[usize] {
        &self.rows[question]
    }

    pub fn row_by_id(&self, question_id: &str) -> Option<&[usize]> {
        self.question_index(question_id).map(|i| self.row(i))
    }

    /// Mean number of incident concepts per question (unknown column counts
    /// for otherwise unlabeled questions).
    pub fn mean_concepts_per_question(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(Vec::len).sum::<usize>() as f64 / self.rows.len() as f64
    }

    /// (question_id, concept_id, 1) triplets in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (&str, &str, u8)> {
        self.rows.iter().enumerate().flat_map(move |(q, row)| {
            row.iter()
                .map(move |&c| (self.questions[q].as_str(), self.concepts[c].as_str(), 1u8))
        })
    }

    pub(crate) fn from_parts(
        questions: Vec<String>,
        concepts: Vec<String>,
        rows: Vec<Vec<usize>>,
    ) -> Self {
        let q_index = questions
            .iter()
            .enumerate()
            .map(|(i, q)| (q.clone(), i))
            .collect();
        QMatrix {
            questions,
            concepts,
            rows,
            q_index,
        }
    }

    /// Rebuild the id->index map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.q_index = self
            .questions
            .iter()
            .enumerate()
            .map(|(i, q)| (q.clone(), i))
            .collect();
    }
}

/// Build the incidence matrix from records: entry (q, c) is set iff question
/// q ever appears labeled with concept c. Index assignment is by sorted id;
/// questions without any label point at the reserved unknown column.
pub fn build_q_matrix(records: &[ResponseRecord]) -> QMatrix {
    let mut question_ids: BTreeSet<&str> = BTreeSet::new();
    let mut concept_ids: BTreeSet<&str> = BTreeSet::new();
    for r in records {
        question_ids.insert(&r.question_id);
        for c in &r.concepts {
            concept_ids.insert(c);
        }
    }

    let questions: Vec<String> = question_ids.iter().map(|s| s.to_string()).collect();
    let mut concepts: Vec<String> = concept_ids.iter().map(|s| s.to_string()).collect();
    concepts.push(UNKNOWN_CONCEPT.to_string());
    let unknown_idx = concepts.len() - 1;

    let q_index: BTreeMap<&str, usize> = question_ids
        .iter()
        .enumerate()
        .map(|(i, &q)| (q, i))
        .collect();
    let c_index: BTreeMap<&str, usize> = concept_ids
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();

    let mut row_sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); questions.len()];
    for r in records {
        let q = q_index[r.question_id.as_str()];
        for c in &r.concepts {
            row_sets[q].insert(c_index[c.as_str()]);
        }
    }

    let rows: Vec<Vec<usize>> = row_sets
        .into_iter()
        .map(|set| {
            if set.is_empty() {
                vec![unknown_idx]
            } else {
                set.into_iter().collect()
            }
        })
        .collect();

    QMatrix::from_parts(questions, concepts, rows)
}
