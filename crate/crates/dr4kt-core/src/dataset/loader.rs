//! CSV/TSV ingestion with a configurable column mapping.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ResponseRecord;

/// Column mapping and parsing options for a raw interaction log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CsvSchema {
    pub student: String,
    pub question: String,
    /// Concept-label column; rows without one map to the reserved
    /// unknown-concept column downstream.
    pub concept: Option<String>,
    pub correctness: String,
    /// Ordering column; when `None`, file order is used.
    pub order: Option<String>,
    /// Multi-concept rows are split on any of these delimiters.
    #[serde(default = "default_delimiters")]
    pub concept_delimiters: Vec<char>,
    /// Treat the order column as numeric (integers/floats); when false it is
    /// compared lexicographically, which is correct for ISO timestamps.
    #[serde(default = "default_true")]
    pub numeric_order: bool,
    /// CSV field delimiter; set to '\t' for TSV.
    #[serde(default = "default_comma")]
    pub field_delimiter: char,
}

fn default_delimiters() -> Vec<char> {
    vec!['_', ',']
}

fn default_true() -> bool {
    true
}

fn default_comma() -> char {
    ','
}

impl CsvSchema {
    /// Layout used by the bundled synthetic corpus and by the ASSISTments
    /// combined exports.
    pub fn assistments() -> Self {
        CsvSchema {
            student: "user_id".into(),
            question: "problem_id".into(),
            concept: Some("skill_id".into()),
            correctness: "correct".into(),
            order: Some("order_id".into()),
            concept_delimiters: default_delimiters(),
            numeric_order: true,
            field_delimiter: ',',
        }
    }

    /// Layout of the Eedi task-1 answer files (concepts live in separate
    /// metadata, so the concept column is absent).
    pub fn eedi() -> Self {
        CsvSchema {
            student: "UserId".into(),
            question: "QuestionId".into(),
            concept: None,
            correctness: "IsCorrect".into(),
            order: Some("DateAnswered".into()),
            concept_delimiters: default_delimiters(),
            numeric_order: false,
            field_delimiter: ',',
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "assistments" => Some(Self::assistments()),
            "eedi" => Some(Self::eedi()),
            _ => None,
        }
    }
}

/// Result of an ingestion run: clean sorted records plus reject accounting.
#[derive(Clone, Debug, Default)]
pub struct LoadOutcome {
    pub records: Vec<ResponseRecord>,
    /// Rows dropped because a mapped field was missing or unparseable.
    pub rejected: usize,
    /// Exact duplicate rows dropped.
    pub duplicates: usize,
}

#[derive(PartialEq, PartialOrd)]
enum OrderValue {
    Num(f64),
    Text(String),
}

/// Load and sort an interaction log.
///
/// Records come back sorted by (student_id, order key), ties broken by file
/// order; each record's `order_key` is its position in the student's sorted
/// stream. Rows whose correctness is not coercible to {0,1} or that miss a
/// mapped field are counted in `rejected`; exact duplicate rows are removed.
pub fn load_interaction_log(path: &Path, schema: &CsvSchema) -> Result<LoadOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.field_delimiter as u8)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Data(format!("cannot open {}: {e}", path.display())),
            _ => Error::Csv(e),
        })?;

    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!(
                "missing mapped column `{name}` in {}",
                path.display()
            ))
        })
    };
    let student_col = col(&schema.student)?;
    let question_col = col(&schema.question)?;
    let correct_col = col(&schema.correctness)?;
    let concept_col = schema.concept.as_deref().map(col).transpose()?;
    let order_col = schema.order.as_deref().map(col).transpose()?;

    let mut rows: Vec<(String, OrderValue, usize, ResponseRecord)> = Vec::new();
    let mut rejected = 0usize;
    let mut duplicates = 0usize;
    let mut seen: HashSet<String> = HashSet::new();

    for (file_pos, row) in reader.records().enumerate() {
        let row = row?;
        let parsed = parse_row(
            &row,
            student_col,
            question_col,
            correct_col,
            concept_col,
            order_col,
            schema,
        );
        let (order, record) = match parsed {
            Some(v) => v,
            None => {
                rejected += 1;
                continue;
            }
        };
        let dup_key = format!(
            "{}\x1f{}\x1f{}\x1f{}\x1f{}",
            record.student_id,
            record.question_id,
            record.correctness,
            match &order {
                OrderValue::Num(n) => n.to_string(),
                OrderValue::Text(t) => t.clone(),
            },
            record.concepts.join("\x1e"),
        );
        if !seen.insert(dup_key) {
            duplicates += 1;
            continue;
        }
        rows.push((record.student_id.clone(), order, file_pos, record));
    }

    if rows.is_empty() {
        return Err(Error::Data(format!(
            "no valid rows in {} ({rejected} rejected)",
            path.display()
        )));
    }

    rows.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.2.cmp(&b.2))
    });

    let mut records = Vec::with_capacity(rows.len());
    let mut current_student: Option<String> = None;
    let mut pos_in_student = 0i64;
    for (student, _, _, mut record) in rows {
        if current_student.as_deref() != Some(student.as_str()) {
            current_student = Some(student);
            pos_in_student = 0;
        }
        record.order_key = pos_in_student;
        pos_in_student += 1;
        records.push(record);
    }

    Ok(LoadOutcome {
        records,
        rejected,
        duplicates,
    })
}

fn parse_row(
    row: &csv::StringRecord,
    student_col: usize,
    question_col: usize,
    correct_col: usize,
    concept_col: Option<usize>,
    order_col: Option<usize>,
    schema: &CsvSchema,
) -> Option<(OrderValue, ResponseRecord)> {
    let student = row.get(student_col)?.trim();
    let question = row.get(question_col)?.trim();
    if student.is_empty() || question.is_empty() {
        return None;
    }
    let correctness = parse_correctness(row.get(correct_col)?.trim())?;

    let concepts = match concept_col {
        Some(c) => {
            let coerced = row.get(c).unwrap_or("").trim();
            split_concepts(coerced, &schema.concept_delimiters)
        }
        None => Vec::new(),
    };

    let order = match order_col {
        Some(c) => {
            let raw = row.get(c)?.trim();
            if schema.numeric_order {
                OrderValue::Num(raw.parse::<f64>().ok()?)
            } else {
                OrderValue::Text(raw.to_string())
            }
        }
        None => OrderValue::Num(0.0),
    };

    Some((
        order,
        ResponseRecord {
            student_id: student.to_string(),
            question_id: question.to_string(),
            correctness,
            order_key: 0,
            concepts,
        },
    ))
}

fn parse_correctness(raw: &str) -> Option<u8> {
    let v: f64 = raw.parse().ok()?;
    if v == 0.0 {
        Some(0)
    } else if v == 1.0 {
        Some(1)
    } else {
        None
    }
}

fn split_concepts(raw: &str, delimiters: &[char]) -> Vec<String> {
    if raw.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<String> = raw
        .split(|c| delimiters.contains(&c))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    out.sort();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn schema() -> CsvSchema {
        CsvSchema {
            student: "user".into(),
            question: "problem".into(),
            concept: Some("skill".into()),
            correctness: "correct".into(),
            order: Some("ts".into()),
            concept_delimiters: vec!['_', ','],
            numeric_order: true,
            field_delimiter: ',',
        }
    }

    #[test]
    fn three_row_csv_loads_in_chronological_order() {
        let f = write_csv(
            "user,problem,skill,correct,ts\nu1,q2,s1,1,20\nu1,q1,s1,0,10\nu2,q1,s2,1,5\n",
        );
        let out = load_interaction_log(f.path(), &schema()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.rejected, 0);
        let ids: Vec<(&str, &str)> = out
            .records
            .iter()
            .map(|r| (r.student_id.as_str(), r.question_id.as_str()))
            .collect();
        assert_eq!(ids, vec![("u1", "q1"), ("u1", "q2"), ("u2", "q1")]);
        assert_eq!(out.records[0].order_key, 0);
        assert_eq!(out.records[1].order_key, 1);
        assert_eq!(out.records[2].order_key, 0);
    }

    #[test]
    fn out_of_domain_correctness_is_rejected_and_counted() {
        let f = write_csv("user,problem,skill,correct,ts\nu1,q1,s1,2,1\nu1,q2,s1,1,2\n");
        let out = load_interaction_log(f.path(), &schema()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejected, 1);
    }

    #[test]
    fn exact_duplicate_rows_are_dropped() {
        let f =
            write_csv("user,problem,skill,correct,ts\nu1,q1,s1,1,1\nu1,q1,s1,1,1\nu1,q1,s1,0,2\n");
        let out = load_interaction_log(f.path(), &schema()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.duplicates, 1);
    }

    #[test]
    fn missing_column_is_an_error() {
        let f = write_csv("user,problem,correct,ts\nu1,q1,1,1\n");
        let err = load_interaction_log(f.path(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn zero_valid_rows_is_an_error() {
        let f = write_csv("user,problem,skill,correct,ts\nu1,q1,s1,7,1\n");
        assert!(load_interaction_log(f.path(), &schema()).is_err());
    }

    #[test]
    fn multi_concept_rows_split_on_configured_delimiters() {
        let f = write_csv("user,problem,skill,correct,ts\nu1,q1,s1_s2,1,1\nu1,q2,\"s3,s1\",0,2\n");
        let out = load_interaction_log(f.path(), &schema()).unwrap();
        assert_eq!(out.records[0].concepts, vec!["s1", "s2"]);
        assert_eq!(out.records[1].concepts, vec!["s1", "s3"]);
    }
}
