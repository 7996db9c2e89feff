//! HTTP API: search, document upload and status, and tool discovery.

pub mod tools;
pub mod wire;

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use crate::engine::{Engine, EngineError};
use crate::ingest::{self, IngestError, UploadRequest, MAX_UPLOAD_BYTES};
use crate::store::DocumentStatus;
use tools::{ToolError, ToolRegistry};
use wire::{SearchRequest, UploadAccepted, WireResponse};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// When set, every request must carry `Authorization: Bearer <token>`.
    pub bearer_token: Option<String>,
    /// Concurrent ingestion jobs.
    pub ingest_workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bearer_token: None,
            ingest_workers: 2,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    tools: Arc<ToolRegistry>,
    jobs: Arc<Semaphore>,
    token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, tools: ToolRegistry, config: &ServiceConfig) -> Self {
        Self {
            engine,
            tools: Arc::new(tools),
            jobs: Arc::new(Semaphore::new(config.ingest_workers.max(1))),
            token: config.bearer_token.as_deref().map(Arc::from),
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn tools(&self) -> &ToolRegistry {
        &self.tools
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::NotFound(_) => StatusCode::NOT_FOUND,
            EngineError::Ingest(IngestError::TooLarge { .. }) => StatusCode::PAYLOAD_TOO_LARGE,
            EngineError::Ingest(IngestError::EmptyFilename) => StatusCode::BAD_REQUEST,
            EngineError::Ingest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<ToolError> for ApiError {
    fn from(e: ToolError) -> Self {
        let status = match &e {
            ToolError::NotFound(_) => StatusCode::NOT_FOUND,
            ToolError::InvalidArguments(_) => StatusCode::BAD_REQUEST,
            ToolError::Duplicate(_) | ToolError::Failed(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

async fn search(State(state): State<AppState>, body: Bytes) -> Result<Json<WireResponse>, ApiError> {
    let request: SearchRequest = parse_json(&body)?;
    let query = request
        .into_query()
        .map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, m))?;
    let engine = state.engine.clone();
    let response = blocking(move || Ok(engine.search(&query)?)).await?;
    Ok(Json(WireResponse::from(response)))
}

async fn upload(
    State(state): State<AppState>,
    Query(params): Query<HashMap<String, String>>,
    body: Bytes,
) -> Result<(StatusCode, Json<UploadAccepted>), ApiError> {
    let filename = params
        .get("filename")
        .filter(|f| !f.is_empty())
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing `filename` query parameter"))?;
    let markdown_mode = match params.get("markdown").map(String::as_str) {
        None | Some("false") | Some("0") => false,
        Some("true") | Some("1") => true,
        Some(other) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("`markdown` must be true or false, got `{other}`"),
            ))
        }
    };
    ingest::check_size(body.len()).map_err(|e| ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, e.to_string()))?;

    let mut request = UploadRequest::new(filename, body.to_vec());
    request.markdown_mode = markdown_mode;
    let engine = state.engine.clone();
    let (ticket, request) = blocking(move || {
        let ticket = engine.begin_upload(&request.filename, request.bytes.len())?;
        engine.mark_processing(&ticket)?;
        Ok((ticket, request))
    })
    .await?;

    let accepted = UploadAccepted {
        doc_id: ticket.doc_id.clone(),
        status: DocumentStatus::Processing.as_str().into(),
        replaced: ticket.replaced,
    };
    let (engine, jobs) = (state.engine.clone(), state.jobs.clone());
    tokio::spawn(async move {
        let Ok(_permit) = jobs.acquire_owned().await else { return };
        let _ = tokio::task::spawn_blocking(move || {
            // Failures are recorded on the document itself.
            let _ = engine.process_upload(&ticket, &request, None, None);
        })
        .await;
    });
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

async fn list_documents(State(state): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(state.engine.list_documents()).expect("serializable"))
}

async fn get_document(State(state): State<AppState>, Path(doc_id): Path<String>) -> Result<Json<Value>, ApiError> {
    let doc = state
        .engine
        .get_document(&doc_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("document `{doc_id}` not found")))?;
    Ok(Json(serde_json::to_value(doc).expect("serializable")))
}

async fn delete_document(State(state): State<AppState>, Path(doc_id): Path<String>) -> Result<StatusCode, ApiError> {
    let engine = state.engine.clone();
    blocking(move || Ok(engine.delete_document(&doc_id)?)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_tools(State(state): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(state.tools.descriptors()).expect("serializable"))
}

async fn call_tool(
    State(state): State<AppState>,
    Path(name): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let args: Value = if body.is_empty() { json!({}) } else { parse_json(&body)? };
    let tools = state.tools.clone();
    let result = blocking(move || Ok(tools.call(&name, &args)?)).await?;
    Ok(Json(result))
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token").into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/search", post(search))
        .route("/documents", post(upload).get(list_documents))
        .route("/documents/{doc_id}", get(get_document).delete(delete_document))
        .route("/tools", get(list_tools))
        .route("/tools/{name}", post(call_tool))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
