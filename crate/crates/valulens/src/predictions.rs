//! Prediction logs: one JSON object per line,
//! `{"image_id", "model_id", "k", "topk": [{"label", "score"}]}`.
//!
//! Lines of the form `{"header": {...}}` carry adapter provenance (model,
//! weights, preprocessing) and are collected separately. Blank lines are
//! skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde_json::Value;
use valulens_core::{PredictionLog, PredictionRecord};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct ParsedLog {
    pub log: PredictionLog,
    pub headers: Vec<Value>,
}

/// Reads a whole log. Any invalid record rejects the entire file.
pub fn read_predictions<R: BufRead>(reader: R, context: &str) -> Result<ParsedLog> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    let mut headers = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(context, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            context: context.to_string(),
            line: line_no,
            message,
        };
        let value: Value = serde_json::from_str(trimmed).map_err(|e| parse_err(e.to_string()))?;
        if let Some(header) = value.get("header") {
            headers.push(header.clone());
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        records.push(record);
        lines.push(line_no);
    }
    let log = PredictionLog::from_records(records).map_err(|source| {
        let index = match &source {
            valulens_core::IngestError::InvalidRecord { index, .. }
            | valulens_core::IngestError::Duplicate { index, .. }
            | valulens_core::IngestError::KMismatch { index, .. } => *index,
        };
        Error::Ingest {
            context: context.to_string(),
            line: lines[index],
            source,
        }
    })?;
    Ok(ParsedLog { log, headers })
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<ParsedLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(BufReader::new(file), &path.display().to_string())
}

/// Writes records in (model_id, image_id) order, headers first.
pub fn write_predictions<W: Write>(mut w: W, log: &PredictionLog, headers: &[Value]) -> Result<()> {
    for h in headers {
        serde_json::to_writer(&mut w, &serde_json::json!({ "header": h }))
            .map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    for record in log.records() {
        serde_json::to_writer(&mut w, record).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
