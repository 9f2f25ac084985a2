//! JSON-over-HTTP selection service.

use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Map, Value};
use tokio::sync::{OwnedSemaphorePermit, Semaphore};

use kpsel::{render_prompt, DialogueSample, PromptMode};

use crate::bundle::{Bundle, BundleSpec};

pub const DEFAULT_MAX_CONCURRENT: usize = 64;

pub struct AppState {
    bundle: RwLock<Arc<Bundle>>,
    spec: RwLock<BundleSpec>,
    permits: Arc<Semaphore>,
}

impl AppState {
    pub fn new(bundle: Bundle, spec: BundleSpec, max_concurrent: usize) -> Arc<Self> {
        Arc::new(AppState {
            bundle: RwLock::new(Arc::new(bundle)),
            spec: RwLock::new(spec),
            permits: Arc::new(Semaphore::new(max_concurrent.max(1))),
        })
    }

    /// The current snapshot; a request keeps the one it started with.
    pub fn snapshot(&self) -> Arc<Bundle> {
        Arc::clone(&self.bundle.read().unwrap_or_else(|p| p.into_inner()))
    }

    /// One of the `max_concurrent` selection slots, if any is free.
    pub fn try_reserve(&self) -> Option<OwnedSemaphorePermit> {
        Arc::clone(&self.permits).try_acquire_owned().ok()
    }

    fn swap(&self, next: Bundle) {
        *self.bundle.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(next);
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/select", post(select))
        .route("/render", post(render))
        .route("/reload", post(reload))
        .with_state(state)
}

struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<&'static str>,
}

impl ApiError {
    fn bad(field: &'static str, message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into(), field: Some(field) }
    }

    fn status(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), field: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

fn parse_object(body: &Bytes) -> Result<Map<String, Value>, ApiError> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ApiError::bad("body", "request body must be a JSON object")),
        Err(e) => Err(ApiError::bad("body", format!("invalid JSON: {e}"))),
    }
}

fn string_list(obj: &Map<String, Value>, field: &'static str) -> Result<Vec<String>, ApiError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ApiError::bad(field, format!("`{field}` must be an array of strings"))),
        Some(_) => Err(ApiError::bad(field, format!("`{field}` must be an array of strings"))),
    }
}

fn string_field(obj: &Map<String, Value>, field: &'static str) -> Result<Option<String>, ApiError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ApiError::bad(field, format!("`{field}` must be a string"))),
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Value> {
    let b = state.snapshot();
    Json(json!({ "status": "ok", "graph_nodes": b.graph.num_nodes() }))
}

async fn select(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let obj = parse_object(&body)?;
    let history = string_list(&obj, "history")?;
    let utterance = string_field(&obj, "utterance")?.unwrap_or_default();
    if utterance.trim().is_empty() {
        return Err(ApiError::bad("utterance", "`utterance` must be a non-empty string"));
    }
    let start_node = string_field(&obj, "start_node")?;
    let permit = state
        .try_reserve()
        .ok_or_else(|| ApiError::status(StatusCode::SERVICE_UNAVAILABLE, "too many concurrent requests"))?;
    let bundle = state.snapshot();
    let sample = DialogueSample { start_node, ..DialogueSample::query(history, utterance) };
    let result = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        bundle.select(&sample)
    })
    .await
    .map_err(|e| ApiError::status(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match result {
        Ok(r) => Ok(Json(r).into_response()),
        Err(e) => Err(ApiError::status(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())),
    }
}

async fn render(body: Bytes) -> Result<Json<Value>, ApiError> {
    let obj = parse_object(&body)?;
    let history = string_list(&obj, "history")?;
    let pool = string_list(&obj, "pool")?;
    let mode = match string_field(&obj, "mode")? {
        None => PromptMode::WithKnowledge,
        Some(m) => m.parse::<PromptMode>().map_err(|e| ApiError::bad("mode", e.to_string()))?,
    };
    if mode == PromptMode::WithKnowledge && pool.is_empty() {
        return Err(ApiError::bad("pool", "with_knowledge needs a non-empty `pool`"));
    }
    let prompt = render_prompt(&history, &pool, mode).map_err(|e| ApiError::bad("pool", e.to_string()))?;
    Ok(Json(json!({ "prompt": prompt })))
}

/// Reloads the bundle, optionally from a new checkpoint path, and swaps it in
/// only if everything loads.
async fn reload(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let checkpoint = if body.is_empty() { None } else { string_field(&parse_object(&body)?, "checkpoint")? };
    let mut spec = state.spec.read().unwrap_or_else(|p| p.into_inner()).clone();
    if let Some(c) = checkpoint {
        spec.checkpoint = c.into();
    }
    let loaded = {
        let spec = spec.clone();
        tokio::task::spawn_blocking(move || Bundle::load(&spec))
            .await
            .map_err(|e| ApiError::status(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    };
    let bundle = loaded.map_err(|e| ApiError::status(StatusCode::UNPROCESSABLE_ENTITY, format!("{e:#}")))?;
    let fingerprint = bundle.model.fingerprint();
    state.swap(bundle);
    *state.spec.write().unwrap_or_else(|p| p.into_inner()) = spec;
    Ok(Json(json!({ "status": "reloaded", "fingerprint": format!("{fingerprint:016x}") })))
}

pub async fn serve(state: Arc<AppState>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
