//! HTTP facade over the engine.
//!
//! Long stages answer `202 Accepted` with a job id; progress is available as
//! a server-sent event stream at `/jobs/{id}/events`. Errors are JSON
//! `{"error", "class", "state"?}` with 404 / 409 / 422 / 502 status codes.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;

use analogy_core::error::ErrorClass;
use analogy_core::gateway::BackendKind;
use analogy_core::jobs::{JobRegistry, Subscription};
use analogy_core::store::StoreError;
use analogy_core::{
    AnalogyId, Concept, Engine, JobId, PipelineError, ProgressEvent, SceneEdit, SessionId, Stage,
};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

/// An error response.
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, class: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into(), "class": class }),
        }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let (status, class) = match e.class() {
            ErrorClass::NotFound => (StatusCode::NOT_FOUND, "not_found"),
            ErrorClass::Conflict => (StatusCode::CONFLICT, "conflict"),
            ErrorClass::Validation => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            ErrorClass::Backend => (StatusCode::BAD_GATEWAY, "backend"),
            ErrorClass::Stage => (StatusCode::INTERNAL_SERVER_ERROR, "stage"),
        };
        let mut err = Self::new(status, class, e.to_string());
        if let PipelineError::WrongState { state, .. } = &e {
            err.body["state"] = json!(state.as_str());
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
}

/// Builds the router. `cors_permissive` allows any origin.
pub fn router(engine: Arc<Engine>, cors_permissive: bool) -> Router {
    let app = Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/validate", post(start_validate))
        .route("/sessions/{id}/analogies", post(start_analogies))
        .route("/sessions/{id}/choose", post(choose))
        .route("/sessions/{id}/storyboard", post(start_storyboard))
        .route("/sessions/{id}/scenes/{index}", patch(edit_scene))
        .route("/sessions/{id}/scenes/{index}/regenerate", post(start_regenerate))
        .route("/sessions/{id}/video", post(start_video))
        .route("/blobs/{hash}", get(get_blob))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/events", get(job_events))
        .with_state(AppState { engine });
    if cors_permissive {
        app.layer(tower_http::cors::CorsLayer::very_permissive())
    } else {
        app
    }
}

fn session_id(raw: &str) -> ApiResult<SessionId> {
    raw.parse().map_err(|_| ApiError::not_found("session"))
}

fn body<T: serde::de::DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::invalid(format!("request body: {e}")))
}

async fn health(State(st): State<AppState>) -> Json<Value> {
    let kinds = st.engine.backend_kinds();
    let summary = if kinds.iter().all(|k| !k.is_live()) {
        "mock"
    } else if kinds.iter().all(|k| k.is_live()) {
        "live"
    } else {
        "mixed"
    };
    let names: Vec<&str> = kinds.iter().map(|k: &BackendKind| k.as_str()).collect();
    Json(json!({
        "status": "ok",
        "backends": summary,
        "text": names[0],
        "image": names[1],
        "caption": names[2],
    }))
}

async fn create_session(State(st): State<AppState>, bytes: Bytes) -> ApiResult<Response> {
    let concept: Concept = body(&bytes)?;
    let session = st.engine.create_session(concept)?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

#[derive(Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    50
}

async fn list_sessions(State(st): State<AppState>, Query(page): Query<Page>) -> ApiResult<Response> {
    let sessions = st.engine.list_sessions(page.offset, page.limit.min(500))?;
    Ok(Json(sessions).into_response())
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(st.engine.get_session(&session_id(&id)?)?).into_response())
}

fn accepted(job: JobId) -> Response {
    (
        StatusCode::ACCEPTED,
        [(header::LOCATION, format!("/jobs/{job}"))],
        Json(json!({ "job_id": job })),
    )
        .into_response()
}

fn start(st: &AppState, id: &str, stage: Stage) -> ApiResult<Response> {
    let job = st.engine.start(&session_id(id)?, stage)?;
    Ok(accepted(job))
}

async fn start_validate(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    start(&st, &id, Stage::Validate)
}

async fn start_analogies(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    start(&st, &id, Stage::Analogies)
}

async fn start_storyboard(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    start(&st, &id, Stage::Storyboard)
}

async fn start_video(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    start(&st, &id, Stage::Video)
}

fn scene_index(raw: &str) -> ApiResult<u8> {
    raw.parse()
        .map_err(|_| ApiError::invalid(format!("scene index {raw:?} is not a number")))
}

async fn start_regenerate(
    State(st): State<AppState>,
    Path((id, index)): Path<(String, String)>,
) -> ApiResult<Response> {
    start(&st, &id, Stage::SceneImage(scene_index(&index)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChooseBody {
    analogy_id: AnalogyId,
}

async fn choose(State(st): State<AppState>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Response> {
    let id = session_id(&id)?;
    let req: ChooseBody = body(&bytes)?;
    Ok(Json(st.engine.choose_analogy(&id, &req.analogy_id)?).into_response())
}

async fn edit_scene(
    State(st): State<AppState>,
    Path((id, index)): Path<(String, String)>,
    bytes: Bytes,
) -> ApiResult<Response> {
    let id = session_id(&id)?;
    let index = scene_index(&index)?;
    let edit: SceneEdit = body(&bytes)?;
    Ok(Json(st.engine.edit_scene(&id, index, &edit)?).into_response())
}

async fn get_blob(State(st): State<AppState>, Path(hash): Path<String>) -> ApiResult<Response> {
    let store = st.engine.store();
    let blob = store.stat_blob(&hash).map_err(|e| match e {
        StoreError::BlobNotFound(_) => ApiError::not_found("blob"),
        other => PipelineError::from(other).into(),
    })?;
    let bytes = store.get_blob(&blob).map_err(PipelineError::from)?;
    let content_type = HeaderValue::from_str(&blob.media_type)
        .unwrap_or(HeaderValue::from_static("application/octet-stream"));
    Ok((
        [
            (header::CONTENT_TYPE, content_type),
            (header::CACHE_CONTROL, HeaderValue::from_static("public, max-age=31536000, immutable")),
        ],
        bytes,
    )
        .into_response())
}

fn job_id(raw: &str) -> ApiResult<JobId> {
    raw.parse().map_err(|_| ApiError::not_found("job"))
}

async fn get_job(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = job_id(&id)?;
    let job = st.engine.jobs().get(&id).ok_or_else(|| ApiError::not_found("job"))?;
    Ok(Json(job).into_response())
}

async fn job_events(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = job_id(&id)?;
    let sub = st
        .engine
        .jobs()
        .subscribe(&id)
        .ok_or_else(|| ApiError::not_found("job"))?;
    let stream = event_stream(st.engine.jobs().clone(), id, sub);
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response())
}

struct StreamState {
    registry: Arc<JobRegistry>,
    job: JobId,
    pending: VecDeque<ProgressEvent>,
    live: Option<tokio::sync::broadcast::Receiver<ProgressEvent>>,
    done: bool,
}

/// Replays the recorded events, then follows the live channel until the
/// terminal event has been sent.
pub fn event_stream(
    registry: Arc<JobRegistry>,
    job: JobId,
    sub: Subscription,
) -> impl Stream<Item = Result<Event, Infallible>> {
    let init = StreamState {
        registry,
        job,
        pending: sub.history.into(),
        live: sub.live,
        done: false,
    };
    futures::stream::unfold(init, |mut s| async move {
        if s.done {
            return None;
        }
        let next = match s.pending.pop_front() {
            Some(e) => Some(e),
            None => loop {
                let Some(rx) = s.live.as_mut() else { break None };
                match rx.recv().await {
                    Ok(e) => break Some(e),
                    Err(RecvError::Lagged(_)) => continue,
                    Err(RecvError::Closed) => {
                        // Fall back to the recorded terminal event.
                        s.live = None;
                        break s
                            .registry
                            .subscribe(&s.job)
                            .and_then(|sub| sub.history.into_iter().find(|e| e.terminal));
                    }
                }
            },
        }?;
        s.done = next.terminal;
        let event = Event::default()
            .event(if next.terminal { "terminal" } else { "progress" })
            .json_data(&next)
            .expect("progress events serialize");
        Some((Ok(event), s))
    })
}
