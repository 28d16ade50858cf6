use std::collections::VecDeque;
use std::convert::Infallible;

use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::Value;
use stepwise_core::api::{
    Ack, AnonymizedTranscript, CreateSession, EventKind, PostMessage, Questionnaire, RoleIdExport, SessionCreated,
    SessionEvent, SessionStatus, SessionSummary,
};
use stepwise_core::codec::{seed_to_value, transcript_to_value};
use tokio::sync::broadcast;
use tower_http::cors::CorsLayer;
use tower_http::trace::TraceLayer;

use crate::error::ServiceError;
use crate::AppState;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { Json(serde_json::json!({ "ok": true })) }))
        .route("/seeds", get(seeds))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/transcripts/{id}", get(anonymized))
        .route("/questionnaires", post(questionnaire))
        .route("/export/roleid", get(export_roleid))
        .layer(CorsLayer::permissive())
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

async fn seeds(State(state): State<AppState>) -> Json<Vec<Value>> {
    Json(
        state
            .seed_ids()
            .iter()
            .filter_map(|id| state.inner.seeds.get(id).map(|s| (id, s)))
            .map(|(id, s)| {
                let mut v = seed_to_value(s);
                v["id"] = Value::String(id.clone());
                v
            })
            .collect(),
    )
}

async fn create_session(
    State(state): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<Json<SessionCreated>, ServiceError> {
    state.create_session(&req).map(Json)
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionSummary>> {
    Json(state.list_sessions())
}

async fn session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSummary>, ServiceError> {
    state.summary(&id).map(Json)
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PostMessage>,
) -> Result<Json<Ack>, ServiceError> {
    let h = state.session(&id)?;
    if h.shared.status() == SessionStatus::Closed {
        return Err(ServiceError::SessionClosed(id));
    }
    let seq = h.post(req.text).await?;
    Ok(Json(Ack { ok: true, seq: Some(seq) }))
}

#[derive(Debug, Default, Deserialize)]
struct CloseBody {
    reason: Option<String>,
}

async fn close(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<CloseBody>>,
) -> Result<Json<Ack>, ServiceError> {
    let h = state.session(&id)?;
    if h.shared.status() == SessionStatus::Closed {
        return Err(ServiceError::SessionClosed(id));
    }
    let reason = body.and_then(|b| b.0.reason).unwrap_or_else(|| "closed by user".into());
    let seq = h.close(&reason).await?;
    Ok(Json(Ack { ok: true, seq: Some(seq) }))
}

async fn transcript(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ServiceError> {
    let h = state.session(&id)?;
    Ok(Json(transcript_to_value(&h.shared.transcript())))
}

async fn anonymized(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<AnonymizedTranscript>, ServiceError> {
    state.anonymized(&id).map(Json)
}

async fn questionnaire(State(state): State<AppState>, Json(q): Json<Questionnaire>) -> Result<Json<Ack>, ServiceError> {
    state.submit_questionnaire(&q)?;
    Ok(Json(Ack { ok: true, seq: None }))
}

async fn export_roleid(State(state): State<AppState>) -> Json<RoleIdExport> {
    Json(state.export_roleid())
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

fn to_sse(e: &SessionEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.kind.name())
        .json_data(e)
        .expect("events serialize")
}

/// Replays events after the cursor, then follows the live feed. Ends after
/// the `closed` event.
async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<impl IntoResponse, ServiceError> {
    let h = state.session(&id)?;
    let after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .or(q.after)
        .unwrap_or(0);
    // Subscribe before reading the backlog so nothing falls between them.
    let rx = h.shared.subscribe();
    let backlog = h.shared.events_after(after);
    let closed_in_backlog = backlog.iter().any(|e| matches!(e.kind, EventKind::Closed { .. }));
    let last = backlog.last().map_or(after, |e| e.seq);
    let shared = h.shared.clone();

    let live: std::pin::Pin<Box<dyn Stream<Item = SessionEvent> + Send>> = if closed_in_backlog {
        Box::pin(stream::empty())
    } else {
        Box::pin(stream::unfold(
            (rx, last, false, shared, VecDeque::<SessionEvent>::new()),
            |(mut rx, mut last, done, shared, mut buf)| async move {
                if done {
                    return None;
                }
                loop {
                    let next = match buf.pop_front() {
                        Some(e) => e,
                        None => match rx.recv().await {
                            Ok(e) => e,
                            Err(broadcast::error::RecvError::Lagged(_)) => {
                                // Fell behind the ring buffer; catch up from the stored log.
                                buf.extend(shared.events_after(last));
                                continue;
                            }
                            Err(broadcast::error::RecvError::Closed) => return None,
                        },
                    };
                    if next.seq <= last {
                        continue;
                    }
                    last = next.seq;
                    let done = matches!(next.kind, EventKind::Closed { .. });
                    return Some((next, (rx, last, done, shared, buf)));
                }
            },
        ))
    };
    let out = stream::iter(backlog)
        .chain(live)
        .map(|e| Ok::<Event, Infallible>(to_sse(&e)));
    Ok(Sse::new(out).keep_alive(KeepAlive::default()))
}
