//! HTTP front end over [`SurveyService`].

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Answer, CreateSession, Progress, Question, ServiceError, SurveyService};

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::UnknownVenue(_) | ServiceError::UnknownField(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::StaleAnswer
            | ServiceError::NothingToUndo
            | ServiceError::AlreadyPresent(_)
            | ServiceError::ComparisonsStarted
            | ServiceError::StageIncomplete => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Log(_) | ServiceError::Rank(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            log::error!("{self}");
        }
        (self.status(), Json(json!({ "error": self.code(), "message": self.to_string() }))).into_response()
    }
}

type Shared = Arc<SurveyService>;
type Reply<T> = Result<T, ServiceError>;

/// Runs service calls, which may fsync or fit, off the async workers.
async fn blocking<T: Send + 'static>(
    svc: &Shared,
    f: impl FnOnce(&SurveyService) -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    let svc = svc.clone();
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .unwrap_or_else(|e| Err(ServiceError::BadRequest(format!("request handler failed: {e}"))))
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "ok": true })) }))
        .route("/sessions", post(create))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/consideration", post(consideration))
        .route("/sessions/{id}/summary", get(summary))
        .route("/rankings/fields/{field}", get(field_ranking))
        .route("/venues", get(venues))
        .with_state(service)
}

async fn create(State(svc): State<Shared>, Json(req): Json<CreateSession>) -> Reply<impl IntoResponse> {
    let id = blocking(&svc, move |s| s.create_session(req)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

#[derive(Debug, Default, Deserialize)]
struct NextParams {
    #[serde(default, rename = "continue")]
    continue_: bool,
}

#[derive(Serialize)]
struct NextReply {
    #[serde(flatten)]
    question: Question,
    progress: Progress,
}

async fn next(State(svc): State<Shared>, Path(id): Path<String>, Query(p): Query<NextParams>) -> Reply<impl IntoResponse> {
    let (question, progress) = blocking(&svc, move |s| s.next_question(&id, p.continue_)).await?;
    Ok(Json(NextReply { question, progress }))
}

async fn answer(State(svc): State<Shared>, Path(id): Path<String>, Json(a): Json<Answer>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.answer(&id, a)).await?))
}

async fn undo(State(svc): State<Shared>, Path(id): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.undo(&id)).await?))
}

#[derive(Deserialize)]
struct AddVenue {
    venue: String,
}

async fn consideration(State(svc): State<Shared>, Path(id): Path<String>, Json(b): Json<AddVenue>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.direct_add(&id, &b.venue)).await?))
}

async fn summary(State(svc): State<Shared>, Path(id): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.summary(&id)).await?))
}

async fn field_ranking(State(svc): State<Shared>, Path(field): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.field_ranking(&field)).await?))
}

#[derive(Deserialize)]
struct Search {
    #[serde(default)]
    q: String,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    20
}

async fn venues(State(svc): State<Shared>, Query(p): Query<Search>) -> impl IntoResponse {
    Json(svc.search_venues(&p.q, p.limit.min(200)))
}

/// Serves until `shutdown` resolves. The log is synced after every append, so
/// stopping needs no extra flush.
pub async fn serve(
    service: Shared,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await
}
