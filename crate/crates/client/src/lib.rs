//! Typed async client for the calearn service.

use calearn_core::api::{
    AnnotationRequest, ApiError, CreateTaskRequest, DatasetInfo, IngestRequest, QueueNext,
    RetrainResponse,
};
use calearn_core::corpus::Class;
use calearn_core::workspace::{Ack, Bootstrap, BootstrapReport, MetricsView, TaskSummary};
use reqwest::{Method, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{0}")]
    Api(ApiError),
    #[error("server returned {status}: {body}")]
    Unexpected { status: u16, body: String },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn api(&self) -> Option<&ApiError> {
        match self {
            ClientError::Api(e) => Some(e),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{}", self.base, path))
    }

    async fn check(resp: Response) -> Result<Response> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.text().await?;
        Err(match serde_json::from_str::<ApiError>(&body) {
            Ok(e) => ClientError::Api(e),
            Err(_) => ClientError::Unexpected {
                status: status.as_u16(),
                body,
            },
        })
    }

    async fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T> {
        Ok(Self::check(req.send().await?).await?.json().await?)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.send(self.request(Method::GET, path)).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.send(self.request(Method::POST, path).json(body)).await
    }

    pub async fn health(&self) -> Result<()> {
        Self::check(self.request(Method::GET, "/health").send().await?).await?;
        Ok(())
    }

    pub async fn ingest(&self, req: &IngestRequest) -> Result<DatasetInfo> {
        self.post("/datasets", req).await
    }

    pub async fn datasets(&self) -> Result<Vec<DatasetInfo>> {
        self.get("/datasets").await
    }

    pub async fn create_task(&self, req: &CreateTaskRequest) -> Result<TaskSummary> {
        self.post("/tasks", req).await
    }

    pub async fn tasks(&self) -> Result<Vec<TaskSummary>> {
        self.get("/tasks").await
    }

    pub async fn delete_task(&self, task: &str) -> Result<()> {
        Self::check(self.request(Method::DELETE, &task_path(task, "")).send().await?).await?;
        Ok(())
    }

    pub async fn status(&self, task: &str) -> Result<TaskSummary> {
        self.get(&task_path(task, "/status")).await
    }

    pub async fn next(&self, task: &str) -> Result<QueueNext> {
        self.get(&task_path(task, "/queue/next")).await
    }

    pub async fn annotate(&self, task: &str, doc_id: &str, cls: Class, annotator: &str) -> Result<Ack> {
        let body = AnnotationRequest {
            doc_id: doc_id.to_string(),
            cls,
            annotator: annotator.to_string(),
        };
        self.post(&task_path(task, "/annotations"), &body).await
    }

    pub async fn metrics(&self, task: &str) -> Result<MetricsView> {
        self.get(&task_path(task, "/metrics")).await
    }

    pub async fn export(&self, task: &str) -> Result<String> {
        let resp = self.request(Method::GET, &task_path(task, "/export.csv")).send().await?;
        Ok(Self::check(resp).await?.text().await?)
    }

    pub async fn retrain(&self, task: &str) -> Result<RetrainResponse> {
        self.send(self.request(Method::POST, &task_path(task, "/retrain"))).await
    }

    pub async fn bootstrap(&self, task: &str, mode: &Bootstrap) -> Result<BootstrapReport> {
        self.post(&task_path(task, "/bootstrap"), mode).await
    }
}

fn task_path(task: &str, rest: &str) -> String {
    format!("/tasks/{}{rest}", encode_segment(task))
}

/// Percent-encodes everything outside the unreserved set.
fn encode_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}
