//! JSON bodies of the HTTP service, shared by server and client.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{Class, Format};
use crate::engine::{EngineConfig, ServeSource};
use crate::error::Error;
use crate::workspace::{Next, Served};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Conflict,
    BadRequest,
    Busy,
}

impl ErrorCode {
    pub fn status(self) -> u16 {
        match self {
            ErrorCode::NotFound => 404,
            ErrorCode::Conflict | ErrorCode::Busy => 409,
            ErrorCode::BadRequest => 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let code = match self.code {
            ErrorCode::NotFound => "not_found",
            ErrorCode::Conflict => "conflict",
            ErrorCode::BadRequest => "bad_request",
            ErrorCode::Busy => "busy",
        };
        write!(f, "{code}: {}", self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<&Error> for ApiError {
    fn from(e: &Error) -> Self {
        let code = match e {
            Error::NotFound { .. } => ErrorCode::NotFound,
            Error::Conflict(_) => ErrorCode::Conflict,
            Error::Busy(_) => ErrorCode::Busy,
            _ => ErrorCode::BadRequest,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::from(&e)
    }
}

/// `POST /datasets`: a server-side path or the file content inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRequest {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub content: Option<String>,
    /// Required with `content`; defaults to the file stem with `path`.
    #[serde(default)]
    pub dataset_id: Option<String>,
    pub format: Format,
    pub text_column: String,
    #[serde(default)]
    pub id_column: Option<String>,
    #[serde(default)]
    pub truth_columns: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub dataset_id: String,
    pub source_uri: String,
    pub documents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateTaskRequest {
    pub task_name: String,
    #[serde(default)]
    pub dataset_id: Option<String>,
    #[serde(default)]
    pub config: Option<EngineConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub doc_id: String,
    pub cls: Class,
    #[serde(default = "default_annotator")]
    pub annotator: String,
}

fn default_annotator() -> String {
    "anonymous".into()
}

/// `GET /tasks/{t}/queue/next`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QueueNext {
    Ready {
        doc_id: String,
        text: String,
        cycle_index: u64,
        source: ServeSource,
    },
    /// Every document of the task is labeled.
    Complete,
}

impl From<Next> for QueueNext {
    fn from(n: Next) -> Self {
        match n {
            Next::Doc(Served {
                doc_id,
                text,
                cycle_index,
                source,
            }) => QueueNext::Ready {
                doc_id,
                text,
                cycle_index,
                source,
            },
            Next::Complete => QueueNext::Complete,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainResponse {
    pub task_name: String,
    /// Index the running cycle will have once it finishes.
    pub cycle_index: u64,
    pub labels_used: usize,
}
