use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cfsim::pipeline::human::ExportLabel;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::{AnnotateError, AnnotationService};

/// Header carrying the shared secret on every API request.
pub const SECRET_HEADER: &str = "x-annotation-secret";

#[derive(Clone)]
struct AppState {
    service: Arc<AnnotationService>,
    secret: Option<Arc<str>>,
}

/// JSON error body: `{"error": "<code>", "message": "..."}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub message: String,
}

impl IntoResponse for AnnotateError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            AnnotateError::NoWork => (StatusCode::NOT_FOUND, "no_work"),
            AnnotateError::NotQualified { .. } => (StatusCode::FORBIDDEN, "not_qualified"),
            AnnotateError::NotAssigned(_) => (StatusCode::CONFLICT, "not_assigned"),
            AnnotateError::ReservationExpired(_) => (StatusCode::GONE, "reservation_expired"),
            AnnotateError::AlreadySubmitted(_) => (StatusCode::CONFLICT, "already_submitted"),
            AnnotateError::BadLabelShape { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "bad_label_shape"),
            AnnotateError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            AnnotateError::DuplicateTask(_) | AnnotateError::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid"),
            AnnotateError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = ApiError {
            error: code.to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Deserialize)]
struct NextQuery {
    worker: String,
}

#[derive(Deserialize)]
struct Submission {
    worker: String,
    task_id: String,
    label: ExportLabel,
}

#[derive(Deserialize)]
struct ExportQuery {
    run: Option<String>,
}

async fn next_task(State(app): State<AppState>, Query(q): Query<NextQuery>) -> Response {
    match app.service.next_task(&q.worker) {
        Ok(view) => Json(view).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn submit(State(app): State<AppState>, Json(s): Json<Submission>) -> Response {
    match app.service.submit(&s.worker, &s.task_id, s.label) {
        Ok(ack) => Json(ack).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn progress(State(app): State<AppState>) -> Response {
    Json(app.service.progress()).into_response()
}

async fn export(State(app): State<AppState>, Query(q): Query<ExportQuery>) -> Response {
    (
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        app.service.export_jsonl(q.run.as_deref()),
    )
        .into_response()
}

async fn check_secret(State(app): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(secret) = &app.secret {
        let given = headers.get(SECRET_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(secret.as_ref()) {
            let body = ApiError {
                error: "unauthorized".into(),
                message: format!("missing or wrong {SECRET_HEADER} header"),
            };
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(req).await
}

/// The HTTP API under `/api`, plus static files from `static_dir` at `/`.
pub fn router(service: Arc<AnnotationService>, secret: Option<String>, static_dir: Option<PathBuf>) -> Router {
    let app = AppState {
        service,
        secret: secret.map(Arc::from),
    };
    let api = Router::new()
        .route("/tasks/next", get(next_task))
        .route("/judgments", post(submit))
        .route("/progress", get(progress))
        .route("/export", get(export))
        .layer(middleware::from_fn_with_state(app.clone(), check_secret))
        .with_state(app);
    let router = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

pub async fn serve(addr: SocketAddr, router: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router).await
}
