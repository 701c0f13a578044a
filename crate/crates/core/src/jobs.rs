//! Descriptors for long-running pipeline jobs.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::prompting::{AnnotationTask, FailureRecord};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Translate,
    Annotate,
    Finalize,
}

impl JobKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Translate => "translate",
            Self::Annotate => "annotate",
            Self::Finalize => "finalize",
        }
    }
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    /// Finished with some items still failing; re-running fills the gaps.
    Partial,
    Complete,
    Failed,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Running => "running",
            Self::Partial => "partial",
            Self::Complete => "complete",
            Self::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Partial | Self::Complete | Self::Failed)
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a job was asked to do.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<AnnotationTask>,
}

/// One item a job could not complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobFailure {
    pub paragraph_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<AnnotationTask>,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

impl From<FailureRecord> for JobFailure {
    fn from(f: FailureRecord) -> Self {
        Self { paragraph_index: f.paragraph_index, task: Some(f.task), error: f.error, raw_response: f.raw_response }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDescriptor {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub job_id: String,
    pub kind: JobKind,
    pub speech_id: String,
    pub status: JobStatus,
    #[serde(default)]
    pub params: JobParams,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    #[serde(default)]
    pub failure_manifest: Vec<JobFailure>,
    /// Job-specific outcome details, e.g. counts or the finalized version.
    #[serde(default)]
    pub result: Value,
    /// Why a failed job failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<Value>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

impl JobDescriptor {
    pub fn new(job_id: String, kind: JobKind, speech_id: String, params: JobParams, now: DateTime<Utc>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            job_id,
            kind,
            speech_id,
            status: JobStatus::Pending,
            params,
            created_at: now,
            updated_at: now,
            failure_manifest: Vec::new(),
            result: Value::Null,
            error: None,
        }
    }
}
