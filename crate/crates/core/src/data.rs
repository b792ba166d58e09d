//! Shared data records and JSONL/file plumbing.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One privacy-infused QA item as consumed by episodes, rewards, and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    /// Loaders assign positional ids to records that arrive without one.
    #[serde(rename = "query_id", default)]
    pub id: String,
    /// Question text shown only to the local model.
    pub question: String,
    /// Acceptable gold answers (any match counts).
    pub answers: Vec<String>,
    /// Labeled privacy items `P`; may be empty for plain QA data.
    #[serde(default)]
    pub privacy_items: Vec<String>,
    #[serde(default)]
    pub source: String,
}

impl Query {
    pub fn new(id: impl Into<String>, question: impl Into<String>, answers: Vec<String>) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            answers,
            privacy_items: Vec::new(),
            source: String::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad json on line {line} of {path}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.display().to_string(), source }
}

/// Read a JSONL file into a vector of records. Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| IoError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source: e,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Write records as JSONL atomically (temp file + rename).
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    let mut body = String::new();
    for rec in records {
        body.push_str(&serde_json::to_string(rec).expect("serializable record"));
        body.push('\n');
    }
    write_atomic(path, body.as_bytes())
}

/// Write bytes atomically: write to `<path>.tmp` in the same directory, then
/// rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        let qs = vec![
            Query::new("q1", "capital of France?", vec!["Paris".into()]),
            Query {
                privacy_items: vec!["The user's friend is born in China.".into()],
                source: "nq".into(),
                ..Query::new("q2", "where was the user's friend born?", vec!["China".into()])
            },
        ];
        write_jsonl(&path, &qs).unwrap();
        let back: Vec<Query> = read_jsonl(&path).unwrap();
        assert_eq!(back, qs);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, "{\"query_id\":\"a\",\"question\":\"q\",\"answers\":[\"x\"]}\nnot json\n").unwrap();
        let err = read_jsonl::<Query>(&path).unwrap_err();
        assert!(matches!(err, IoError::Json { line: 2, .. }));
    }
}
