use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::read_records;
use crate::error::{Error, Result};

/// One externally produced prediction, already judged against gold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u64,
    pub query_only_correct: bool,
    pub rag_correct: bool,
    pub context_correct: bool,
    pub self_conflict: bool,
}

/// Reads line-delimited prediction records in file order. Blank lines are
/// skipped; repeated ids are rejected with both line numbers.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let mut first_seen: HashMap<u64, usize> = HashMap::new();
    let mut out = Vec::new();
    for (line, record) in read_records::<PredictionRecord>(path)? {
        if let Some(&first_line) = first_seen.get(&record.id) {
            return Err(Error::DuplicateId {
                id: record.id,
                first_line,
                second_line: line,
            });
        }
        first_seen.insert(record.id, line);
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn rec(id: u64) -> String {
        format!(
            r#"{{"id":{id},"query_only_correct":true,"rag_correct":false,"context_correct":true,"self_conflict":false}}"#
        )
    }

    #[test]
    fn empty_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_predictions(&p).unwrap().is_empty());
    }

    #[test]
    fn preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        fs::write(&p, format!("{}\n{}\n", rec(5), rec(2))).unwrap();
        let ids: Vec<u64> = load_predictions(&p).unwrap().iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![5, 2]);
    }

    #[test]
    fn duplicate_cites_both_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        let lines = [1, 2, 9, 3, 4, 5, 9].map(rec).join("\n");
        fs::write(&p, lines).unwrap();
        match load_predictions(&p).unwrap_err() {
            Error::DuplicateId { id, first_line, second_line } => {
                assert_eq!((id, first_line, second_line), (9, 3, 7));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        fs::write(&p, format!("{}\n{{\"id\":3,\"rag_correct\":true}}\n", rec(1))).unwrap();
        match load_predictions(&p).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("missing field"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        fs::write(&p, "not json\n").unwrap();
        assert!(matches!(load_predictions(&p).unwrap_err(), Error::Parse { line: 1, .. }));
    }
}
