use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classify::BandError;
use crate::corpus::CorpusError;
use crate::metrics::MetricsError;
use crate::prompting::{PromptError, ResponseError};
use crate::provider::ProviderError;
use crate::review::{AnnotationRef, ReviewError};
use crate::vizdata::VizError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error. Every variant maps onto one machine-readable code used
/// by the HTTP error envelope and the CLI's stderr output.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown {kind} '{id}'")]
    NotFound { kind: &'static str, id: String },

    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Conflict(String),

    #[error("{message}")]
    FinalizationIncomplete {
        message: String,
        pending: Vec<AnnotationRef>,
        escalated: Vec<AnnotationRef>,
    },

    #[error("schema_version {found} is not supported (expected {expected}) in {path}")]
    SchemaVersion { found: u32, expected: u32, path: String },

    #[error(transparent)]
    Corpus(#[from] CorpusError),

    #[error(transparent)]
    Band(#[from] BandError),

    #[error(transparent)]
    Prompt(#[from] PromptError),

    #[error(transparent)]
    Response(#[from] ResponseError),

    #[error(transparent)]
    Review(ReviewError),

    #[error(transparent)]
    Metrics(#[from] MetricsError),

    #[error(transparent)]
    Viz(VizError),

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

/// The uniform `{code, message, details}` error document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl Error {
    pub fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        Error::NotFound { kind, id: id.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Error::NotFound { .. } => "not_found",
            Error::Metrics(m) if m.is_not_found() => "not_found",
            Error::Validation(_)
            | Error::Corpus(_)
            | Error::Band(_)
            | Error::Prompt(_)
            | Error::Response(_)
            | Error::Metrics(_) => "validation",
            Error::Review(_) => "validation",
            Error::Viz(VizError::UnknownKind(_)) => "not_found",
            Error::Viz(_) => "validation",
            Error::Conflict(_) => "conflict",
            Error::FinalizationIncomplete { .. } => "finalization_incomplete",
            Error::SchemaVersion { .. } => "schema_version",
            Error::Provider(_) => "provider",
            Error::Io { .. } | Error::Json { .. } => "internal",
        }
    }

    pub fn details(&self) -> Value {
        match self {
            Error::NotFound { kind, id } => json!({ "kind": kind, "id": id }),
            Error::FinalizationIncomplete { pending, escalated, .. } => {
                json!({ "pending": pending, "escalated": escalated })
            }
            Error::SchemaVersion { found, expected, path } => {
                json!({ "found": found, "expected": expected, "path": path })
            }
            Error::Response(ResponseError::Parse { raw, .. }) => json!({ "raw": raw }),
            _ => Value::Null,
        }
    }

    pub fn envelope(&self) -> ErrorEnvelope {
        ErrorEnvelope {
            code: self.code().to_string(),
            message: self.to_string(),
            details: self.details(),
        }
    }
}

impl From<VizError> for Error {
    fn from(err: VizError) -> Self {
        match err {
            VizError::Metrics(m) => Error::Metrics(m),
            other => Error::Viz(other),
        }
    }
}

impl From<ReviewError> for Error {
    fn from(err: ReviewError) -> Self {
        match err {
            ReviewError::NotReady { pending, escalated } => Error::FinalizationIncomplete {
                message: format!(
                    "cannot finalize: {} pending and {} escalated review entries",
                    pending.len(),
                    escalated.len()
                ),
                pending,
                escalated,
            },
            other => Error::Review(other),
        }
    }
}
