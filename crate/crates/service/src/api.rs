use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use metabokg_core::agents::{AgentMessage, Classification, Ledger, Runtime, TraceEvent};
use metabokg_core::interp::FileSummary;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio_stream::wrappers::BroadcastStream;
use tower_http::trace::TraceLayer;

use crate::store::{plain_file_name, Session, SessionStore, StoreError};

#[derive(Clone)]
pub struct AppState {
    pub runtime: Arc<Runtime>,
    pub store: Arc<SessionStore>,
    pub upload_limit: usize,
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Storage(String),
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::NotFound(e.to_string()),
            StoreError::Io { .. } => ApiError::Storage(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({"error": self.to_string()}))).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.upload_limit;
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/files", post(upload_file).layer(DefaultBodyLimit::max(limit)))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/artifacts/{name}", get(get_artifact))
        .route("/sessions/{id}/trace", get(get_trace))
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

#[derive(Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

async fn create_session(State(app): State<AppState>) -> Result<(StatusCode, Json<Created>), ApiError> {
    let store = app.store.clone();
    let session = tokio::task::spawn_blocking(move || store.create())
        .await
        .map_err(|e| ApiError::Storage(e.to_string()))??;
    tracing::info!(session = %session.id, "session created");
    Ok((StatusCode::CREATED, Json(Created { session_id: session.id.clone() })))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.store.get(&id)?;
    let state = session.lock().await;
    Ok(Json(json!({
        "session_id": session.id,
        "turns": state.turns,
        "history": state.history,
        "uploaded_files": state.uploaded_files,
        "ledger": state.ledger,
    }))
    .into_response())
}

#[derive(Deserialize)]
pub struct PostMessage {
    pub text: String,
}

#[derive(Serialize, Deserialize)]
pub struct TurnReply {
    pub session_id: String,
    pub turn: u32,
    pub answer: String,
    pub message: AgentMessage,
    pub classification: Option<Classification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retriable: Option<bool>,
    /// This turn's events, as streamed.
    pub events: Vec<TraceEvent>,
    pub ledger: Ledger,
}

fn persist(session: &Session, state: &metabokg_core::agents::SessionState) -> Result<(), ApiError> {
    session.persist(state).map_err(ApiError::from)
}

async fn post_message(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<PostMessage>,
) -> Result<Json<TurnReply>, ApiError> {
    let session = app.store.get(&id)?;
    let mut state = session.lock().await;
    let turn = state.turns + 1;
    tracing::info!(session = %id, turn, "turn started");
    let outcome = app.runtime.run_turn(&mut state, &session.dir, &body.text, session.as_ref()).await;
    tracing::info!(session = %id, turn, steps = outcome.steps, failed = outcome.retriable.is_some(), "turn finished");
    persist(&session, &state)?;
    Ok(Json(TurnReply {
        session_id: id,
        turn,
        answer: outcome.answer().to_owned(),
        message: outcome.message.clone(),
        classification: outcome.classification,
        retriable: outcome.retriable,
        events: state.events_of_turn(turn).cloned().collect(),
        ledger: state.ledger,
    }))
}

#[derive(Deserialize)]
pub struct UploadQuery {
    pub name: String,
}

async fn upload_file(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> Result<Json<FileSummary>, ApiError> {
    let session = app.store.get(&id)?;
    if !plain_file_name(&q.name) {
        return Err(ApiError::BadRequest(format!("invalid file name {:?}", q.name)));
    }
    let mut state = session.lock().await;
    let path = session.dir.join(&q.name);
    tokio::fs::write(&path, &body)
        .await
        .map_err(|e| ApiError::Storage(format!("cannot store {}: {e}", path.display())))?;
    let result = app.runtime.register_upload(&mut state, &session.dir, &q.name, session.as_ref());
    persist(&session, &state)?;
    let summary = result.map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    tracing::info!(session = %id, file = %q.name, bytes = body.len(), "file uploaded");
    Ok(Json(summary))
}

#[derive(Deserialize)]
pub struct EventsQuery {
    /// Only events with a larger sequence number are replayed.
    pub since: Option<u64>,
}

fn sse_event(e: &TraceEvent) -> Event {
    Event::default().event("trace").id(e.seq.to_string()).data(serde_json::to_string(e).expect("events serialize"))
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = app.store.get(&id)?;
    let (past, rx) = session.subscribe(q.since);
    let last = past.last().map(|e| e.seq).or(q.since);
    let replay = stream::iter(past.iter().map(sse_event).collect::<Vec<_>>());
    let live = BroadcastStream::new(rx)
        .map(|item| match item {
            Ok(e) => Ok(e),
            Err(tokio_stream::wrappers::errors::BroadcastStreamRecvError::Lagged(n)) => Err(n),
        })
        .filter(move |item| {
            let keep = match item {
                Ok(e) => last.is_none_or(|l| e.seq > l),
                Err(_) => true,
            };
            futures::future::ready(keep)
        })
        .map(|item| match item {
            Ok(e) => sse_event(&e),
            Err(n) => Event::default().event("lagged").data(format!("{n} events were dropped; reconnect with ?since=")),
        });
    Ok(Sse::new(replay.chain(live).map(Ok)).keep_alive(KeepAlive::default()))
}

async fn get_artifact(State(app): State<AppState>, Path((id, name)): Path<(String, String)>) -> Result<Response, ApiError> {
    let session = app.store.get(&id)?;
    if !plain_file_name(&name) {
        return Err(ApiError::Forbidden(format!("{name:?} is outside the session")));
    }
    let path = session.dir.join(&name);
    let real = match tokio::fs::canonicalize(&path).await {
        Ok(p) => p,
        Err(_) => return Err(ApiError::NotFound(format!("no artifact {name}"))),
    };
    let dir = tokio::fs::canonicalize(&session.dir).await.map_err(|e| ApiError::Storage(e.to_string()))?;
    if !real.starts_with(&dir) {
        return Err(ApiError::Forbidden(format!("{name:?} is outside the session")));
    }
    let bytes = tokio::fs::read(&real).await.map_err(|_| ApiError::NotFound(format!("no artifact {name}")))?;
    let mime = match real.extension().and_then(|e| e.to_str()) {
        Some("csv") => "text/csv",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

/// One trace event per line, then a `{"ledger": ...}` line with the
/// session's token totals. Does not wait for a turn in flight.
async fn get_trace(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.store.get(&id)?;
    let (events, _) = session.subscribe(None);
    let mut body: String = events.iter().map(|e| serde_json::to_string(e).expect("events serialize") + "\n").collect();
    let ledger = Ledger::from_trace(&events);
    body.push_str(&serde_json::to_string(&json!({"ledger": ledger})).expect("ledger serializes"));
    body.push('\n');
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
