//! Id-space sequences to index-space sequences.

use crate::backbone::{EncodedSequence, EncodedStep};
use crate::dataset::{InteractionSequence, QMatrix};

/// Encode sequences against a Q-matrix's index maps. Questions absent from
/// the Q-matrix take the cold path (`question = None`, no concepts): zero id
/// embedding and, lacking any concept metadata, the concept term is empty.
pub fn encode_sequences(seqs: &[InteractionSequence], qmatrix: &QMatrix) -> Vec<EncodedSequence> {
    seqs.iter()
        .map(|seq| EncodedSequence {
            id: seq.sequence_id(),
            steps: seq
                .responses
                .iter()
                .map(|r| match qmatrix.question_index(&r.question_id) {
                    Some(q) => EncodedStep {
                        question: Some(q),
                        concepts: qmatrix.row(q).to_vec(),
                        label: r.correctness,
                    },
                    None => EncodedStep {
                        question: None,
                        concepts: Vec::new(),
                        label: r.correctness,
                    },
                })
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_q_matrix, ResponseRecord};

    #[test]
    fn known_questions_get_their_row_and_unknown_go_cold() {
        let records = vec![ResponseRecord {
            student_id: "u".into(),
            question_id: "qa".into(),
            correctness: 1,
            order_key: 0,
            concepts: vec!["c1".into()],
        }];
        let qm = build_q_matrix(&records);
        let seqs = vec![InteractionSequence {
            student_id: "u".into(),
            chunk: 0,
            responses: vec![
                records[0].clone(),
                ResponseRecord {
                    student_id: "u".into(),
                    question_id: "novel".into(),
                    correctness: 0,
                    order_key: 1,
                    concepts: vec![],
                },
            ],
        }];
        let encoded = encode_sequences(&seqs, &qm);
        assert_eq!(encoded[0].steps[0].question, Some(0));
        assert_eq!(encoded[0].steps[0].concepts, vec![0]);
        assert_eq!(encoded[0].steps[1].question, None);
        assert!(encoded[0].steps[1].concepts.is_empty());
        assert_eq!(encoded[0].id, "u#0");
    }
}
