//! Prints corpus statistics of the synthetic generator for calibration.

use dr4kt_core::dataset::{
    build_q_matrix, discrimination_histogram, question_pass_rate, segment_sequences,
    split_sequences, ResponseRecord,
};
use dr4kt_core::synth::{generate, SynthConfig};

fn main() {
    let cfg = SynthConfig::full(1);
    let rows = generate(&cfg);
    println!("raw rows: {}", rows.len());

    let records: Vec<ResponseRecord> = rows
        .iter()
        .map(|r| ResponseRecord {
            student_id: r.user_id.clone(),
            question_id: r.problem_id.clone(),
            correctness: r.correct,
            order_key: r.order_id as i64,
            concepts: r.skill_id.split('_').map(str::to_string).collect(),
        })
        .collect();
    let qm = build_q_matrix(&records);
    println!(
        "questions: {}  concepts: {}  concepts/question: {:.3}",
        qm.num_questions(),
        qm.num_concepts(),
        qm.mean_concepts_per_question()
    );

    let seqs = segment_sequences(&records, 50, 5);
    let kept: usize = seqs.iter().map(|s| s.len()).sum();
    println!(
        "sequences: {}  kept responses: {}  responses/seq: {:.2}",
        seqs.len(),
        kept,
        kept as f64 / seqs.len() as f64
    );

    let split = split_sequences(seqs, (8, 1, 1), 1).unwrap();
    let stats = question_pass_rate(&split.train);
    let train_responses: Vec<&ResponseRecord> = split
        .train
        .iter()
        .flat_map(|s| s.responses.iter())
        .collect();
    let overall: f64 = train_responses
        .iter()
        .map(|r| f64::from(r.correctness))
        .sum::<f64>()
        / train_responses.len() as f64;
    println!(
        "train responses: {}  overall correct rate: {:.4}",
        train_responses.len(),
        overall
    );

    let hist = discrimination_histogram(&train_responses, &stats, 10).unwrap();
    println!(
        "histogram: {:?}  low(<0.5) share: {:.4}  filtered: {} ({:.1}%)",
        hist.proportions
            .iter()
            .map(|p| (p * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>(),
        hist.low_share,
        hist.filtered_out,
        100.0 * hist.filtered_out as f64 / train_responses.len() as f64
    );

    // QT oracle ceiling: predict the majority side of the train pass rate.
    let test_responses: Vec<&ResponseRecord> =
        split.test.iter().flat_map(|s| s.responses.iter()).collect();
    let mut qt_hits = 0usize;
    let mut qt_n = 0usize;
    for r in &test_responses {
        if let Some(rate) = stats.pass_rate(&r.question_id) {
            let pred = u8::from(rate >= 0.5);
            qt_hits += usize::from(pred == r.correctness);
            qt_n += 1;
        } else {
            // global-majority fallback
            qt_hits += usize::from(r.correctness == 1);
            qt_n += 1;
        }
    }
    println!(
        "QT oracle test ACC (train majority vote): {:.4} over {} responses",
        qt_hits as f64 / qt_n as f64,
        qt_n
    );

    // Question sparsity.
    let mut under10 = 0usize;
    let mut total_q = 0usize;
    for (_, _, n) in stats.iter() {
        total_q += 1;
        if n < 10 {
            under10 += 1;
        }
    }
    println!(
        "train questions: {}  answered<10: {} ({:.1}%)",
        total_q,
        under10,
        100.0 * under10 as f64 / total_q as f64
    );
}
