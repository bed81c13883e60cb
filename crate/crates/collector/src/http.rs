use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use meshmeter_core::MeasurementRecord;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::store::{ExportFilter, Store, StoreOptions};

pub const DEFAULT_PORT: u16 = 7402;
pub const RECORDS_PATH: &str = "/api/v1/records";

pub struct AppState {
    pub store: Arc<Store>,
    /// Directory holding the participant page; `/ui` answers 404 without it.
    pub ui_dir: Option<PathBuf>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route(RECORDS_PATH, get(export).post(ingest))
        .route("/ui", get(ui_index))
        .route("/ui/", get(ui_index))
        .route("/ui/{*path}", get(ui_file))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(state)
}

fn bad_request(body: Value) -> Response {
    (StatusCode::BAD_REQUEST, Json(body)).into_response()
}

async fn ingest(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let value: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return bad_request(json!({"error": "Malformed", "detail": e.to_string()})),
    };
    let record = match MeasurementRecord::from_value(value) {
        Ok(r) => r,
        Err(v) => {
            return bad_request(
                json!({"error": "SchemaViolation", "field": v.field, "reason": v.reason}),
            )
        }
    };
    let store = state.store.clone();
    match tokio::task::spawn_blocking(move || store.append(&record)).await {
        Ok(Ok(index)) => (StatusCode::CREATED, Json(json!({ "index": index }))).into_response(),
        Ok(Err(e)) => {
            tracing::error!("append failed: {e}");
            (
                StatusCode::INTERNAL_SERVER_ERROR,
                Json(json!({"error": "StoreUnavailable"})),
            )
                .into_response()
        }
        Err(e) => {
            tracing::error!("append task failed: {e}");
            StatusCode::INTERNAL_SERVER_ERROR.into_response()
        }
    }
}

/// Empty parameters (`?from_ms=&reporter=`) mean "no constraint".
fn parse_filter(q: &HashMap<String, String>) -> Result<ExportFilter, String> {
    let num = |key: &str| -> Result<Option<u64>, String> {
        match q.get(key).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| format!("{key} must be an integer, got `{s}`")),
        }
    };
    Ok(ExportFilter {
        from_ms: num("from_ms")?,
        to_ms: num("to_ms")?,
        reporter: q.get("reporter").filter(|s| !s.is_empty()).cloned(),
    })
}

async fn export(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let filter = match parse_filter(&q) {
        Ok(f) => f,
        Err(detail) => return bad_request(json!({"error": "BadQuery", "detail": detail})),
    };
    let store = state.store.clone();
    let entries = match tokio::task::spawn_blocking(move || store.export(&filter)).await {
        Ok(Ok(entries)) => entries,
        _ => return StatusCode::INTERNAL_SERVER_ERROR.into_response(),
    };
    let mut body = String::new();
    for e in &entries {
        body.push_str(&e.record.to_json_line());
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("svg") => "image/svg+xml",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

async fn serve_ui(state: &AppState, rel: &str) -> Response {
    let Some(root) = &state.ui_dir else {
        return (
            StatusCode::NOT_FOUND,
            "participant page not installed; start the collector with --ui-dir",
        )
            .into_response();
    };
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let path = root.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => (
            [(header::CONTENT_TYPE, content_type(&path))],
            Body::from(bytes),
        )
            .into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn ui_index(State(state): State<Arc<AppState>>) -> Response {
    serve_ui(&state, "index.html").await
}

async fn ui_file(State(state): State<Arc<AppState>>, UrlPath(path): UrlPath<String>) -> Response {
    serve_ui(&state, &path).await
}

pub struct CollectorHandle {
    pub addr: SocketAddr,
    pub store: Arc<Store>,
    task: JoinHandle<()>,
}

impl CollectorHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for CollectorHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Opens the store under `data_dir` and serves it on `bind` in the background.
pub async fn start(
    bind: &str,
    data_dir: &Path,
    options: StoreOptions,
    ui_dir: Option<PathBuf>,
) -> io::Result<CollectorHandle> {
    let store = Arc::new(Store::open(data_dir, options)?);
    let listener = TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let app = router(Arc::new(AppState {
        store: store.clone(),
        ui_dir,
    }));
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("collector server stopped: {e}");
        }
    });
    Ok(CollectorHandle { addr, store, task })
}
