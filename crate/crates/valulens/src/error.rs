use std::io;
use std::path::PathBuf;

use serde_json::{json, Value};
use thiserror::Error;
use valulens_core::{AuditError, CorpusError, IngestError, ValidationError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("write failed: {0}")]
    Write(#[from] io::Error),
    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("{context}: line {line}: {source}")]
    Ingest {
        context: String,
        line: usize,
        #[source]
        source: IngestError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("nothing to report: no criterion results")]
    EmptyReport,
    #[error("no regression fit for model '{0}'")]
    MissingFit(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::Write(_) => "io",
            Error::Parse { .. } | Error::Csv(_) => "parse",
            Error::Validation(_) => "validation",
            Error::Ingest { .. } => "ingest",
            Error::Corpus(CorpusError::Validation(_)) => "validation",
            Error::Corpus(_) => "corpus",
            Error::Audit(_) => "audit",
            Error::EmptyReport | Error::MissingFit(_) => "report",
        }
    }

    /// Machine-readable form printed by the CLI and returned by the server.
    pub fn to_json(&self) -> Value {
        let mut body = json!({
            "kind": self.kind(),
            "message": self.to_string(),
        });
        let violations = match self {
            Error::Validation(v) | Error::Corpus(CorpusError::Validation(v)) => Some(v),
            _ => None,
        };
        if let Some(v) = violations {
            body["violations"] = serde_json::to_value(&v.violations).expect("violations serialize");
        }
        json!({ "error": body })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
