//! JSON-lines record formats shared by ingestion, evaluation and the
//! simulator.

use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::DocMeta;
use crate::keyterm::KeyTermExtractor;
use crate::unit_store::Document;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Corpus line: `{"doc_id": ..., "title": ..., "timestamp": ...}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub doc_id: String,
    pub title: String,
    pub timestamp: i64,
}

impl From<CorpusRecord> for DocMeta {
    fn from(r: CorpusRecord) -> Self {
        DocMeta {
            doc_id: r.doc_id,
            title: r.title,
            timestamp: r.timestamp,
        }
    }
}

/// Click-log line: `{"user_id": ..., "doc_id": ..., "title": ..., "timestamp": ...}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub user_id: String,
    pub doc_id: String,
    pub title: String,
    pub timestamp: i64,
}

impl ClickRecord {
    pub fn to_document(&self, extractor: &dyn KeyTermExtractor) -> Document {
        Document::new(&self.doc_id, &self.title, self.timestamp, extractor)
    }
}

/// Reads one JSON value per non-blank line. Errors carry the 1-based line
/// number.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| RecordError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<'a, T, W, I>(mut writer: W, items: I) -> io::Result<()>
where
    T: Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
