//! Line-delimited JSON datasets: labeled input notes and the augmented
//! records the pipeline emits. One object per line, UTF-8,
//! newline-terminated; file order defines processing order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}")]
    MalformedLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("expected a JSON object at line {line}")]
    NotAnObject { line: usize },
    #[error("missing field {field} at line {line}")]
    MissingField { field: &'static str, line: usize },
    #[error("invalid field {field} at line {line}: {reason}")]
    InvalidField {
        field: &'static str,
        line: usize,
        reason: String,
    },
    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
}

/// An opaque task label: a JSON string or number, never interpreted by the
/// pipeline and copied verbatim onto augmented records.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Label(Value);

impl Label {
    pub fn as_value(&self) -> &Value {
        &self.0
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(Value::String(s.to_string()))
    }
}

impl From<i64> for Label {
    fn from(n: i64) -> Self {
        Label(Value::from(n))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            Value::String(s) => write!(f, "{s}"),
            other => write!(f, "{other}"),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        match value {
            Value::String(_) | Value::Number(_) => Ok(Label(value)),
            other => Err(D::Error::custom(format!(
                "label must be a string or number, got {other}"
            ))),
        }
    }
}

/// One labeled input text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub id: String,
    pub text: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

/// An ordered collection of notes; ids are pairwise distinct and order is
/// the processing order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub notes: Vec<Note>,
}

impl Dataset {
    pub fn new(notes: Vec<Note>) -> Self {
        Self { notes }
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }
}

/// One augmented output with full provenance. For fallback copies the text
/// equals the source note and `pr`/`hr` describe that emitted text (trivially
/// 1.0 / 0.0); per-attempt candidate scores live in the audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub id: String,
    pub source_id: String,
    pub text: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
    pub pr: f64,
    pub hr: f64,
    pub attempts: u32,
    pub accepted: bool,
    pub fallback: bool,
    pub backend: String,
    pub seed: u64,
}

/// A dataset-invariant breach reported by [`validate_dataset`]. Violations
/// are data, not failures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub note_id: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "note {:?}: {}", self.note_id, self.message)
    }
}

/// Reads a notes file, one JSON object per non-empty line, preserving file
/// order and `meta` verbatim.
pub fn load_notes(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_notes(&raw)
}

pub fn parse_notes(raw: &str) -> Result<Dataset, CorpusError> {
    let mut notes: Vec<Note> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(line).map_err(|source| CorpusError::MalformedLine {
                line: line_no,
                source,
            })?;
        let note = note_from_value(value, line_no)?;
        if seen.insert(note.id.clone(), line_no).is_some() {
            return Err(CorpusError::DuplicateId {
                id: note.id,
                line: line_no,
            });
        }
        notes.push(note);
    }
    Ok(Dataset::new(notes))
}

fn note_from_value(value: Value, line: usize) -> Result<Note, CorpusError> {
    let obj = value.as_object().ok_or(CorpusError::NotAnObject { line })?;
    for field in ["id", "text", "label"] {
        if !obj.contains_key(field) {
            return Err(CorpusError::MissingField {
                field: match field {
                    "id" => "id",
                    "text" => "text",
                    _ => "label",
                },
                line,
            });
        }
    }
    serde_json::from_value(value).map_err(|e| CorpusError::InvalidField {
        field: "record",
        line,
        reason: e.to_string(),
    })
}

/// Checks the Note invariants and returns every breach found.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for note in &dataset.notes {
        if note.id.is_empty() {
            violations.push(Violation {
                note_id: note.id.clone(),
                message: "empty id".into(),
            });
        }
        if note.text.trim().is_empty() {
            violations.push(Violation {
                note_id: note.id.clone(),
                message: "empty text".into(),
            });
        }
        *seen.entry(note.id.as_str()).or_insert(0) += 1;
    }
    for (id, count) in seen {
        if count > 1 {
            violations.push(Violation {
                note_id: id.to_string(),
                message: format!("duplicate id ({count} occurrences)"),
            });
        }
    }
    violations
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), CorpusError> {
    let as_io = |source: std::io::Error| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(as_io)?;
    let mut writer = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("serializable value");
        writer.write_all(line.as_bytes()).map_err(as_io)?;
        writer.write_all(b"\n").map_err(as_io)?;
    }
    writer.flush().map_err(as_io)
}

/// Writes notes as JSONL with deterministic field order.
pub fn save_notes(notes: &[Note], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_jsonl(notes, path.as_ref())
}

/// Writes records as JSONL with deterministic field order; loading the file
/// back yields equal records.
pub fn save_records(
    records: &[AugmentedRecord],
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    write_jsonl(records, path.as_ref())
}

/// Reads an augmented-record file written by [`save_records`].
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<AugmentedRecord>, CorpusError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AugmentedRecord =
            serde_json::from_str(line).map_err(|source| CorpusError::MalformedLine {
                line: idx + 1,
                source,
            })?;
        records.push(record);
    }
    Ok(records)
}
