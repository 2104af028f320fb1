//! HTTP review service over a score report.
//!
//! Serves the `/api` endpoints used by the review console and, optionally, a
//! directory of static console assets under `/`.

pub mod log;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use pcod_core::scoring::{FlagPolicy, ScoreError};
use serde::Deserialize;
use thiserror::Error;
use tower_http::services::ServeDir;

pub use log::{Verdict, VerdictLog, VerdictRecord};
pub use session::{Session, SessionFiles};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Input(String),
    #[error("input files disagree: {0}")]
    IdMismatch(String),
    #[error("cannot open verdict log {path}")]
    Log {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("verdict log {0} is held by another process")]
    LogLocked(PathBuf),
    #[error("unknown document `{0}`")]
    UnknownId(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("cannot bind {addr}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server error")]
    Server(#[source] std::io::Error),
}

impl ServiceError {
    /// Environment problems (port, lock, log permissions) as opposed to bad input.
    pub fn is_environment(&self) -> bool {
        matches!(self, ServiceError::Log { .. } | ServiceError::LogLocked(_) | ServiceError::Bind { .. } | ServiceError::Server(_))
    }
}

pub type SharedSession = Arc<Mutex<Session>>;

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownId(_) => StatusCode::NOT_FOUND,
            ServiceError::Score(_) | ServiceError::Input(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        error(status, self.to_string())
    }
}

#[derive(Debug, Deserialize)]
struct PointsQuery {
    #[serde(default)]
    flagged_only: bool,
}

#[derive(Debug, Deserialize)]
struct VerdictBody {
    doc_id: String,
    verdict: String,
    #[serde(default)]
    note: String,
}

async fn summary(State(s): State<SharedSession>) -> Response {
    Json(s.lock().unwrap().summary()).into_response()
}

async fn points(State(s): State<SharedSession>, Query(q): Query<PointsQuery>) -> Response {
    Json(s.lock().unwrap().points(q.flagged_only)).into_response()
}

async fn point(State(s): State<SharedSession>, UrlPath(id): UrlPath<String>) -> Response {
    match s.lock().unwrap().point(&id) {
        Some(detail) => Json(detail).into_response(),
        None => ServiceError::UnknownId(id).into_response(),
    }
}

async fn set_policy(State(s): State<SharedSession>, body: String) -> Response {
    let policy: FlagPolicy = match serde_json::from_str(&body) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid policy: {e}")),
    };
    match s.lock().unwrap().set_policy(policy) {
        Ok(view) => Json(view).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn verdict(State(s): State<SharedSession>, body: String) -> Response {
    let body: VerdictBody = match serde_json::from_str(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid verdict body: {e}")),
    };
    let Some(v) = Verdict::parse(&body.verdict) else {
        return error(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("verdict must be confirmed-outlier, valid-data or unsure, got `{}`", body.verdict),
        );
    };
    match s.lock().unwrap().record(&body.doc_id, v, &body.note) {
        Ok(rec) => (StatusCode::CREATED, Json(rec)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn export(State(s): State<SharedSession>) -> Response {
    Json(s.lock().unwrap().export()).into_response()
}

async fn no_console() -> Response {
    (
        StatusCode::NOT_FOUND,
        "no console assets configured; the API is under /api\n",
    )
        .into_response()
}

pub fn router(session: SharedSession, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/summary", get(summary))
        .route("/api/points", get(points))
        .route("/api/points/:id", get(point))
        .route("/api/policy", put(set_policy))
        .route("/api/verdicts", post(verdict))
        .route("/api/export", get(export))
        .with_state(session);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(no_console),
    }
}

pub async fn bind(addr: &str) -> Result<tokio::net::TcpListener, ServiceError> {
    tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind {
        addr: addr.to_string(),
        source,
    })
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> Result<(), ServiceError> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    ::log::info!("serving on {addr:?}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Server)
}
