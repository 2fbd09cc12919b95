//! HTTP API under `/api/v1`. All bodies are JSON except the rules source,
//! which travels as plain text.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use pkgtrace_core::sandbox::SpecError;
use pkgtrace_core::{BackendSpec, PackageSpec};
use serde::Deserialize;
use serde_json::json;

use crate::store::{JobState, StoreError};
use crate::{ReportError, Shared, SubmitError, SubmitRulesError};

pub const PREFIX: &str = "/api/v1";
pub const DEFAULT_PAGE_SIZE: usize = 20;

type AppState = Arc<Shared>;

pub(crate) fn router(shared: AppState) -> Router {
    // Room for the multipart framing around a maximum-size upload.
    let body_limit = shared.config.max_upload_bytes.saturating_add(1 << 20);
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/jobs", get(list_jobs).post(submit_job))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/report", get(get_report))
        .route("/rules", get(get_rules).put(put_rules))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(shared);
    Router::new().nest(PREFIX, api)
}

struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl ToString) -> Self {
        ApiError {
            status,
            body: json!({ "error": kind, "message": message.to_string() }),
        }
    }

    fn with(mut self, key: &str, value: serde_json::Value) -> Self {
        self.body[key] = value;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not-found", e),
            _ => {
                log::error!("store: {e}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store", e)
            }
        }
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::Spec(SpecError::Invalid { ref fields, .. })
            | SubmitError::Invalid { ref fields, .. } => {
                let fields = json!(fields);
                ApiError::new(StatusCode::BAD_REQUEST, "validation", &e).with("fields", fields)
            }
            SubmitError::Spec(SpecError::UnknownEcosystem { .. }) => {
                ApiError::new(StatusCode::BAD_REQUEST, "validation", &e)
                    .with("fields", json!(["ecosystem"]))
            }
            SubmitError::Bundle(_) => ApiError::new(StatusCode::BAD_REQUEST, "validation", &e)
                .with("fields", json!(["bundle"])),
            SubmitError::TooLarge { .. } => {
                ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "too-large", e)
            }
            SubmitError::Store(s) => s.into(),
        }
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Deserialize)]
struct ListQuery {
    state: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn list_jobs(
    State(s): State<AppState>,
    Query(q): Query<ListQuery>,
) -> Result<Response, ApiError> {
    let state = match q.state.as_deref().filter(|v| !v.is_empty()) {
        None => None,
        Some(v) => Some(v.parse::<JobState>().map_err(|m| {
            ApiError::new(StatusCode::BAD_REQUEST, "validation", m).with("fields", json!(["state"]))
        })?),
    };
    let page = s.store.list_page(
        state,
        q.page.unwrap_or(1),
        q.page_size.unwrap_or(DEFAULT_PAGE_SIZE),
    )?;
    Ok(Json(page).into_response())
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(s.store.load_job(&id)?).into_response())
}

async fn get_report(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    match s.report(&id) {
        // Served verbatim so clients see the stored bytes.
        Ok(text) => Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response()),
        Err(ReportError::NotReady(state)) => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not-ready",
            "the job has not succeeded",
        )
        .with("state", json!(state.as_str()))),
        Err(ReportError::Store(e)) => Err(e.into()),
    }
}

async fn get_rules(State(s): State<AppState>) -> Response {
    let source = s.rules.read().unwrap().source.clone();
    (
        [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
        source,
    )
        .into_response()
}

async fn put_rules(State(s): State<AppState>, body: Bytes) -> Result<StatusCode, ApiError> {
    let source = std::str::from_utf8(&body).map_err(|_| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "rules",
            "ruleset must be UTF-8 text",
        )
    })?;
    match s.put_rules(source) {
        Ok(_) => Ok(StatusCode::NO_CONTENT),
        Err(SubmitRulesError::Parse(e)) => {
            let (line, column) = e.position();
            Err(ApiError::new(StatusCode::BAD_REQUEST, "rules", &e)
                .with("line", json!(line))
                .with("column", json!(column)))
        }
        Err(SubmitRulesError::Store(e)) => Err(e.into()),
    }
}

/// Keep only a safe final path component of an uploaded file name.
fn safe_file_name(name: Option<&str>, fallback: &str) -> String {
    let base = name
        .and_then(|n| n.rsplit(['/', '\\']).next())
        .unwrap_or("");
    let clean: String = base
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '+'))
        .collect();
    if clean.is_empty() || clean.starts_with('.') {
        fallback.to_string()
    } else {
        clean
    }
}

async fn submit_job(State(s): State<AppState>, multipart: Multipart) -> Result<Response, ApiError> {
    let id = s.store.next_id();
    match read_submission(&s, &id, multipart).await {
        Ok((spec, backend)) => {
            let shared = Arc::clone(&s);
            let id = tokio::task::spawn_blocking(move || shared.submit(id, spec, backend))
                .await
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))??;
            Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response())
        }
        Err(e) => {
            s.store.remove_job_dir(&id);
            Err(e)
        }
    }
}

/// Text fields become the package spec; a `payload` file becomes its local
/// path and a `bundle` file switches the job to replay.
async fn read_submission(
    s: &Shared,
    id: &str,
    mut multipart: Multipart,
) -> Result<(PackageSpec, Option<BackendSpec>), ApiError> {
    let limit = s.config.max_upload_bytes;
    let too_large = || ApiError::from(SubmitError::TooLarge { limit });
    let mut spec = PackageSpec {
        ecosystem: String::new(),
        name: None,
        version: None,
        local_path: None,
    };
    let mut backend = None;
    let dir = s.job_dir(id);

    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| multipart_error(e, limit))?
    {
        let name = field.name().unwrap_or("").to_string();
        let file_name = field.file_name().map(str::to_string);
        let data = field.bytes().await.map_err(|e| multipart_error(e, limit))?;
        if data.len() > limit {
            return Err(too_large());
        }
        let text = || {
            String::from_utf8(data.to_vec()).map_err(|_| {
                ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "validation",
                    format!("field `{name}` must be text"),
                )
                .with("fields", json!([name]))
            })
        };
        let non_empty = |v: String| Some(v.trim().to_string()).filter(|v| !v.is_empty());
        match name.as_str() {
            "ecosystem" => spec.ecosystem = text()?.trim().to_string(),
            "name" => spec.name = non_empty(text()?),
            "version" => spec.version = non_empty(text()?),
            "payload" => {
                let path = save_upload(
                    &dir.join("upload"),
                    &safe_file_name(file_name.as_deref(), "payload"),
                    &data,
                )?;
                spec.local_path = Some(path);
            }
            "bundle" => {
                let path = save_upload(&dir, "bundle.tar.gz", &data)?;
                backend = Some(BackendSpec::Replay { bundle_path: path });
            }
            other => {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "validation",
                    format!("unknown field `{other}`"),
                )
                .with("fields", json!([other])))
            }
        }
    }
    Ok((spec, backend))
}

fn save_upload(dir: &std::path::Path, name: &str, data: &[u8]) -> Result<PathBuf, ApiError> {
    let fail = |e: std::io::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store", e);
    std::fs::create_dir_all(dir).map_err(fail)?;
    let path = dir.join(name);
    std::fs::write(&path, data).map_err(fail)?;
    Ok(std::path::absolute(&path).unwrap_or(path))
}

fn multipart_error(e: axum::extract::multipart::MultipartError, limit: usize) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        SubmitError::TooLarge { limit }.into()
    } else {
        ApiError::new(StatusCode::BAD_REQUEST, "validation", e.body_text())
    }
}

/// Bind and serve until the listener fails.
/// Serve until `shutdown` resolves, then finish in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    router: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown)
        .await
}
