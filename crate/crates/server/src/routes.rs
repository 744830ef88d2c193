use std::path::PathBuf;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use calearn_core::api::{
    AnnotationRequest, ApiError, CreateTaskRequest, DatasetInfo, ErrorCode, IngestRequest,
    QueueNext, RetrainResponse,
};
use calearn_core::corpus::{ingest_dataset, ingest_reader, Dataset, IngestOptions, Origin};
use calearn_core::workspace::Bootstrap;
use calearn_core::Error;
use serde::Serialize;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::actor::Handle;

pub struct Failure(ApiError);

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.into())
    }
}

impl From<JsonRejection> for Failure {
    fn from(r: JsonRejection) -> Self {
        Failure(ApiError::new(ErrorCode::BadRequest, r.body_text()))
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.code.status()).unwrap_or(StatusCode::BAD_REQUEST);
        (status, Json(self.0)).into_response()
    }
}

type Reply<T> = Result<T, Failure>;

fn ok<T: Serialize>(v: T) -> Reply<Json<T>> {
    Ok(Json(v))
}

pub fn router(handle: Handle, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/datasets", post(ingest).get(datasets))
        .route("/tasks", post(create_task).get(list_tasks))
        .route("/tasks/{task}", get(status).delete(delete_task))
        .route("/tasks/{task}/status", get(status))
        .route("/tasks/{task}/queue/next", get(next))
        .route("/tasks/{task}/annotations", post(annotate))
        .route("/tasks/{task}/metrics", get(metrics))
        .route("/tasks/{task}/export.csv", get(export))
        .route("/tasks/{task}/retrain", post(retrain))
        .route("/tasks/{task}/bootstrap", post(bootstrap));
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app.fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(handle)
}

async fn not_found() -> Failure {
    Failure(ApiError::new(ErrorCode::NotFound, "no such route"))
}

async fn ingest(
    State(h): State<Handle>,
    body: Result<Json<IngestRequest>, JsonRejection>,
) -> Reply<(StatusCode, Json<DatasetInfo>)> {
    let Json(req) = body?;
    let opts = IngestOptions {
        format: req.format,
        text_column: req.text_column,
        id_column: req.id_column,
        truth_columns: req.truth_columns,
    };
    // parsing can take a while; keep it off the async workers
    let dataset = tokio::task::spawn_blocking(move || -> Reply<Dataset> {
        match (req.path, req.content) {
            (Some(path), None) => {
                let mut ds = ingest_dataset(&path, &opts)?;
                if let Some(id) = req.dataset_id {
                    ds.dataset_id = id;
                }
                Ok(ds)
            }
            (None, Some(content)) => {
                let id = req.dataset_id.ok_or_else(|| {
                    ApiError::new(ErrorCode::BadRequest, "dataset_id is required with inline content")
                })?;
                Ok(ingest_reader(content.as_bytes(), &id, "inline", &opts)?)
            }
            _ => Err(ApiError::new(ErrorCode::BadRequest, "give exactly one of path or content").into()),
        }
    })
    .await
    .map_err(|e| ApiError::new(ErrorCode::BadRequest, e.to_string()))??;
    let info = DatasetInfo {
        dataset_id: dataset.dataset_id.clone(),
        source_uri: dataset.source_uri.clone(),
        documents: dataset.len(),
    };
    h.call(move |a| {
        a.workspace_mut().add_dataset(dataset)?;
        a.persist();
        Ok::<_, Error>(())
    })
    .await??;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn datasets(State(h): State<Handle>) -> Reply<Json<Vec<DatasetInfo>>> {
    ok(h.call(|a| {
        a.workspace()
            .corpus()
            .datasets()
            .map(|d| DatasetInfo {
                dataset_id: d.dataset_id.clone(),
                source_uri: d.source_uri.clone(),
                documents: d.len(),
            })
            .collect()
    })
    .await?)
}

async fn create_task(
    State(h): State<Handle>,
    body: Result<Json<CreateTaskRequest>, JsonRejection>,
) -> Reply<impl IntoResponse> {
    let Json(req) = body?;
    let summary = h
        .call(move |a| {
            let s = a
                .workspace_mut()
                .create_task(&req.task_name, req.dataset_id.as_deref(), req.config)?;
            a.persist();
            Ok::<_, Error>(s)
        })
        .await??;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_tasks(State(h): State<Handle>) -> Reply<impl IntoResponse> {
    ok(h.call(|a| a.workspace().summaries()).await?)
}

async fn delete_task(State(h): State<Handle>, Path(task): Path<String>) -> Reply<StatusCode> {
    h.call(move |a| {
        a.workspace_mut().delete_task(&task)?;
        a.persist();
        Ok::<_, Error>(())
    })
    .await??;
    Ok(StatusCode::NO_CONTENT)
}

async fn status(State(h): State<Handle>, Path(task): Path<String>) -> Reply<impl IntoResponse> {
    ok(h.call(move |a| a.workspace().summary(&task)).await??)
}

async fn next(State(h): State<Handle>, Path(task): Path<String>) -> Reply<Json<QueueNext>> {
    let next = h
        .call(move |a| {
            let (next, job) = a.workspace_mut().next_to_label(&task)?;
            if let Some(job) = job {
                a.launch(job);
            }
            Ok::<_, Error>(next)
        })
        .await??;
    ok(next.into())
}

async fn annotate(
    State(h): State<Handle>,
    Path(task): Path<String>,
    body: Result<Json<AnnotationRequest>, JsonRejection>,
) -> Reply<impl IntoResponse> {
    let Json(req) = body?;
    let ack = h
        .call(move |a| {
            let (ack, job) = a.workspace_mut().submit_label(
                &task,
                &req.doc_id,
                req.cls,
                &req.annotator,
                Origin::Manual,
            )?;
            if let Some(job) = job {
                a.launch(job);
            }
            Ok::<_, Error>(ack)
        })
        .await??;
    ok(ack)
}

async fn metrics(State(h): State<Handle>, Path(task): Path<String>) -> Reply<impl IntoResponse> {
    ok(h.call(move |a| a.workspace().metrics(&task)).await??)
}

async fn export(State(h): State<Handle>, Path(task): Path<String>) -> Reply<Response> {
    let bytes = h.call(move |a| a.workspace().export(&task)).await??;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], bytes).into_response())
}

async fn retrain(State(h): State<Handle>, Path(task): Path<String>) -> Reply<(StatusCode, Json<RetrainResponse>)> {
    let resp = h
        .call(move |a| {
            let job = a.workspace_mut().begin_cycle(&task)?;
            let resp = RetrainResponse {
                task_name: task,
                cycle_index: job.cycle_index,
                labels_used: job.labeled_count(),
            };
            a.launch(job);
            Ok::<_, Error>(resp)
        })
        .await??;
    Ok((StatusCode::ACCEPTED, Json(resp)))
}

async fn bootstrap(
    State(h): State<Handle>,
    Path(task): Path<String>,
    body: Result<Json<Bootstrap>, JsonRejection>,
) -> Reply<impl IntoResponse> {
    let Json(mode) = body?;
    let report = h
        .call(move |a| {
            let (report, job) = a.workspace_mut().bootstrap(&task, &mode)?;
            if let Some(job) = job {
                a.launch(job);
            }
            a.persist();
            Ok::<_, Error>(report)
        })
        .await??;
    ok(report)
}
