//! Line-delimited JSON files for worlds and example sets.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Example, ExampleSet, Fact, KnowledgeWorld, Split, Vocab, WorldSpec};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct WorldHeader {
    spec: WorldSpec,
    vocab: Vocab,
}

#[derive(Serialize, Deserialize)]
struct ExampleLine {
    split: Split,
    #[serde(flatten)]
    example: Example,
}

fn parse_err(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

pub(crate) fn write_lines<T: Serialize>(path: &Path, head: Option<String>, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in head.into_iter().chain(rows.iter().map(|r| serde_json::to_string(r).expect("row serializes"))) {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses every non-blank line as `T`, keeping 1-based line numbers.
pub(crate) fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| serde_json::from_str(&l).map(|r| (n, r)).map_err(|e| parse_err(path, n, e)))
        .collect()
}

/// Non-blank lines with 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn save_world(world: &KnowledgeWorld, path: impl AsRef<Path>) -> Result<()> {
    let header = WorldHeader {
        spec: world.spec.clone(),
        vocab: world.vocab,
    };
    write_lines(
        path.as_ref(),
        Some(serde_json::to_string(&header).expect("header serializes")),
        &world.facts,
    )
}

pub fn load_world(path: impl AsRef<Path>) -> Result<KnowledgeWorld> {
    let path = path.as_ref();
    let mut lines = read_lines(path)?.into_iter();
    let (n, head) = lines.next().ok_or_else(|| parse_err(path, 1, "missing world header"))?;
    let header: WorldHeader = serde_json::from_str(&head).map_err(|e| parse_err(path, n, e))?;
    let facts = lines
        .map(|(n, l)| serde_json::from_str::<Fact>(&l).map_err(|e| parse_err(path, n, e)))
        .collect::<Result<Vec<_>>>()?;
    if facts.len() != header.spec.num_facts() {
        return Err(parse_err(
            path,
            facts.len() + 1,
            format!("expected {} facts, found {}", header.spec.num_facts(), facts.len()),
        ));
    }
    Ok(KnowledgeWorld {
        spec: header.spec,
        vocab: header.vocab,
        facts,
    })
}

pub fn save_examples(set: &ExampleSet, path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<ExampleLine> = set
        .examples
        .iter()
        .map(|e| ExampleLine {
            split: set.split,
            example: e.clone(),
        })
        .collect();
    write_lines(path.as_ref(), None, &rows)
}

pub fn load_examples(path: impl AsRef<Path>) -> Result<ExampleSet> {
    let path = path.as_ref();
    let mut split = None;
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut examples = Vec::new();
    for (n, row) in read_records::<ExampleLine>(path)? {
        match split {
            None => split = Some(row.split),
            Some(s) if s != row.split => {
                return Err(parse_err(path, n, format!("split {:?} differs from earlier {:?}", row.split, s)))
            }
            _ => {}
        }
        if let Some(&first_line) = seen.get(&row.example.id) {
            return Err(Error::DuplicateId {
                id: row.example.id,
                first_line,
                second_line: n,
            });
        }
        seen.insert(row.example.id, n);
        examples.push(row.example);
    }
    Ok(ExampleSet {
        split: split.unwrap_or(Split::Train),
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_examples, generate_world};

    #[test]
    fn world_and_examples_round_trip() {
        let spec = WorldSpec {
            num_entities: 6,
            num_attributes: 3,
            vocab_size: 64,
            belief_error_rate: 0.5,
            context_error_rate: 0.5,
            self_conflict_rate: 0.25,
            seed: 4,
        };
        let world = generate_world(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_world(&world, dir.path().join("world.jsonl")).unwrap();
        assert_eq!(load_world(dir.path().join("world.jsonl")).unwrap(), world);

        let set = build_examples(&world, 18, 0.5, 0.25, 1).unwrap();
        let (_, test) = set.split_off_test(6, 2).unwrap();
        save_examples(&test, dir.path().join("test.jsonl")).unwrap();
        let back = load_examples(dir.path().join("test.jsonl")).unwrap();
        assert_eq!(back, test);
        assert_eq!(back.split, Split::Test);
    }

    #[test]
    fn mixed_split_labels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let row = |id: u64, split: &str| {
            format!(
                r#"{{"split":"{split}","id":{id},"query":[4,5],"gold_answer":[9],"contexts":[],"context_correct":false,"self_conflict":false,"belief_answer":[9]}}"#
            )
        };
        fs::write(&p, format!("{}\n{}\n", row(0, "train"), row(1, "test"))).unwrap();
        let err = load_examples(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
