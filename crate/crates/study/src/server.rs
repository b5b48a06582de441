//! HTTP interface for raters.
//!
//! ```text
//! POST /sessions              {rater_id, seed?} -> {session_id, progress}
//! GET  /sessions/{id}/next                      -> {token, progress, image} | {done: true, progress}
//! POST /sessions/{id}/scores  {token, score}    -> {accepted, progress}
//! GET  /report                                  -> StudyReport
//! ```
//!
//! `image` is a base64 PNG. Nothing sent before a session completes names a
//! patient, a dose version or a file path; internal failures are reported
//! without detail.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::error::StudyError;
use crate::session::Progress;
use crate::study::{NextItem, Study};

pub type Shared = Arc<Mutex<Study>>;

#[derive(Debug, Deserialize)]
struct CreateSession {
    rater_id: String,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct SubmitScore {
    token: String,
    score: i64,
}

#[derive(Debug, Serialize)]
struct Accepted {
    accepted: bool,
    progress: Progress,
}

struct ApiError(StudyError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            StudyError::UnknownSession(_) => StatusCode::NOT_FOUND,
            StudyError::ScoreOutOfRange(_) | StudyError::EmptyRater => StatusCode::BAD_REQUEST,
            StudyError::StaleToken | StudyError::ConflictingScore => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let message = if status == StatusCode::INTERNAL_SERVER_ERROR {
            eprintln!("ldct study: {}", self.0);
            "internal error".to_string()
        } else {
            self.0.to_string()
        };
        (status, Json(json!({ "accepted": false, "error": message }))).into_response()
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        Self(e)
    }
}

fn lock(state: &Shared) -> std::sync::MutexGuard<'_, Study> {
    state.lock().unwrap_or_else(|p| p.into_inner())
}

async fn create_session(
    State(state): State<Shared>,
    Json(req): Json<CreateSession>,
) -> Result<impl IntoResponse, ApiError> {
    let mut study = lock(&state);
    let s = study.create_session(&req.rater_id, req.seed)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": s.id, "progress": s.progress() })),
    ))
}

async fn next_item(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let study = lock(&state);
    Ok(Json(match study.next_item(&id)? {
        NextItem::Item {
            token,
            progress,
            png,
        } => json!({
            "token": token,
            "progress": progress,
            "image": base64::engine::general_purpose::STANDARD.encode(png),
        }),
        NextItem::Done { progress } => json!({ "done": true, "progress": progress }),
    }))
}

async fn submit_score(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<SubmitScore>,
) -> Result<Json<Accepted>, ApiError> {
    let mut study = lock(&state);
    let progress = study.submit(&id, &req.token, req.score)?;
    Ok(Json(Accepted {
        accepted: true,
        progress,
    }))
}

async fn report(State(state): State<Shared>) -> Result<impl IntoResponse, ApiError> {
    let study = lock(&state);
    Ok(Json(study.report()?))
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/scores", post(submit_score))
        .route("/report", get(report))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Shared,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds `addr`, reports the bound address through `on_bound`, and serves
/// until Ctrl-C.
pub fn run_blocking(study: Study, addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let listener = TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, Arc::new(Mutex::new(study)), shutdown).await
    })
}
