use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use hivechat_core::conversation::{Conversation, ConversationId, MessageState};
use hivechat_core::engine::EngineError;
use hivechat_core::event::Event;
use hivechat_core::orchestrator::OrchestratorError;

use crate::protocol::{ClientCommand, CommandFrame, Participant, ServerFrame};
use crate::state::{AppState, ServiceError};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Forbidden(_) => StatusCode::FORBIDDEN,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Orchestrator(OrchestratorError::Engine(e)) => match e {
                EngineError::UnknownConversation(_) => StatusCode::NOT_FOUND,
                EngineError::Persist(_) | EngineError::Corrupt { .. } => {
                    StatusCode::INTERNAL_SERVER_ERROR
                }
                _ => StatusCode::CONFLICT,
            },
            ServiceError::Orchestrator(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/ws", get(ws_upgrade))
        .route("/conversations", post(open_conversation))
        .route("/conversations/{id}", get(conversation))
        .route("/conversations/{id}/join", post(join))
        .route("/conversations/{id}/commands", post(command))
        .route("/users/{user_id}/history", get(history))
        .route("/events", get(events))
        .route("/metrics", get(metrics))
        .route("/ledger", get(ledger))
        .with_state(state)
}

#[derive(Deserialize)]
struct OpenRequest {
    user_id: String,
    /// Overrides the seeded A/B assignment.
    #[serde(default)]
    automation: Option<bool>,
}

#[derive(Serialize)]
struct Opened {
    conversation_id: ConversationId,
    automation_enabled: bool,
}

fn open(state: &AppState, user_id: &str, automation: Option<bool>) -> Result<Opened, ServiceError> {
    if user_id.trim().is_empty() {
        return Err(ServiceError::BadRequest("user_id must not be empty".into()));
    }
    let now = state.now();
    state.with(|o| {
        let id = match automation {
            Some(a) => {
                let phase = o.settings().default_phase.clone();
                o.open_conversation_with(user_id, phase, a, now)?
            }
            None => o.open_conversation(user_id, now)?,
        };
        Ok(Opened {
            conversation_id: id,
            automation_enabled: o.conversation(id)?.automation_enabled,
        })
    })
}

async fn open_conversation(
    State(state): State<AppState>,
    Json(req): Json<OpenRequest>,
) -> Result<Json<Opened>, ServiceError> {
    open(&state, &req.user_id, req.automation).map(Json)
}

async fn conversation(
    State(state): State<AppState>,
    Path(id): Path<u64>,
) -> Result<Json<Conversation>, ServiceError> {
    state
        .read(|o| o.conversation(ConversationId(id)).cloned())
        .map(Json)
        .map_err(Into::into)
}

#[derive(Deserialize)]
struct JoinRequest {
    worker_id: String,
}

fn join_worker(state: &AppState, conv: ConversationId, worker: &str) -> Result<(), ServiceError> {
    let now = state.now();
    state.with(|o| {
        if !o.conversation(conv)?.is_active_worker(worker) {
            o.join_worker(conv, worker, now)?;
        }
        Ok(())
    })
}

async fn join(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Json(req): Json<JoinRequest>,
) -> Result<StatusCode, ServiceError> {
    join_worker(&state, ConversationId(id), &req.worker_id)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct CommandRequest {
    participant: Participant,
    command: ClientCommand,
}

async fn command(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Json(req): Json<CommandRequest>,
) -> Result<Json<ServerFrame>, ServiceError> {
    let seq = state.apply(ConversationId(id), &req.participant, &req.command)?;
    Ok(Json(ServerFrame::Ack {
        id: None,
        command: req.command.name().to_string(),
        seq,
    }))
}

/// Earlier conversations of one user: their messages and accepted replies
/// plus recorded facts, oldest first.
#[derive(Serialize)]
struct HistoryEntry {
    conversation_id: ConversationId,
    closed: bool,
    transcript: Vec<HistoryLine>,
    facts: Vec<String>,
}

#[derive(Serialize)]
struct HistoryLine {
    role: hivechat_core::conversation::Role,
    text: String,
}

async fn history(
    State(state): State<AppState>,
    Path(user_id): Path<String>,
) -> Json<Vec<HistoryEntry>> {
    Json(state.read(|o| {
        o.engine()
            .conversations()
            .filter(|c| c.user_id == user_id)
            .map(|c| HistoryEntry {
                conversation_id: c.id,
                closed: c.closed,
                transcript: c
                    .messages
                    .iter()
                    .filter(|m| m.is_user() || m.state == MessageState::Accepted)
                    .map(|m| HistoryLine {
                        role: m.role,
                        text: m.text.clone(),
                    })
                    .collect(),
                facts: c.facts.iter().map(|f| f.text.clone()).collect(),
            })
            .collect()
    }))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
}

async fn events(State(state): State<AppState>, Query(q): Query<EventsQuery>) -> Json<Vec<Event>> {
    Json(state.read(|o| o.engine().events_since(q.since).to_vec()))
}

async fn metrics(State(state): State<AppState>) -> Response {
    Json(state.read(|o| o.metrics())).into_response()
}

async fn ledger(State(state): State<AppState>) -> Response {
    Json(state.read(|o| o.engine().ledger().totals().clone())).into_response()
}

#[derive(Deserialize)]
struct WsQuery {
    #[serde(default)]
    conversation_id: Option<u64>,
    #[serde(default)]
    user_id: Option<String>,
    #[serde(default)]
    worker_id: Option<String>,
}

async fn ws_upgrade(
    State(state): State<AppState>,
    Query(q): Query<WsQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ServiceError> {
    let (conv, who) = match (q.conversation_id, q.user_id, q.worker_id) {
        (Some(c), None, Some(w)) => {
            join_worker(&state, ConversationId(c), &w)?;
            (ConversationId(c), Participant::Worker(w))
        }
        (Some(c), Some(u), None) => {
            let owner =
                state.read(|o| o.conversation(ConversationId(c)).map(|c| c.user_id.clone()))?;
            if owner != u {
                return Err(ServiceError::Forbidden(format!(
                    "{u} does not own conversation {c}"
                )));
            }
            (ConversationId(c), Participant::User(u))
        }
        (None, Some(u), None) => {
            let opened = open(&state, &u, None)?;
            (opened.conversation_id, Participant::User(u))
        }
        _ => {
            return Err(ServiceError::BadRequest(
                "connect with user_id, or conversation_id plus one of user_id / worker_id".into(),
            ))
        }
    };
    Ok(ws.on_upgrade(move |socket| session(socket, state, conv, who)))
}

async fn send(socket: &mut WebSocket, frame: &ServerFrame) -> bool {
    let text = serde_json::to_string(frame).expect("frames serialize");
    socket.send(WsMessage::Text(text.into())).await.is_ok()
}

async fn session(mut socket: WebSocket, state: AppState, conv: ConversationId, who: Participant) {
    let mut rx = state.subscribe();
    let last_seq = state.read(|o| o.engine().next_seq().checked_sub(1));
    let welcome = ServerFrame::Welcome {
        conversation_id: conv,
        participant: who.clone(),
        last_seq,
    };
    if !send(&mut socket, &welcome).await {
        return;
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(WsMessage::Text(t))) => t.to_string(),
                    Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reply = match serde_json::from_str::<CommandFrame>(&text) {
                    Err(e) => ServerFrame::Error {
                        id: serde_json::from_str::<serde_json::Value>(&text)
                            .ok()
                            .and_then(|v| v.get("id").and_then(|i| i.as_u64())),
                        message: format!("unrecognized command: {e}"),
                    },
                    Ok(frame) => match state.apply(conv, &who, &frame.command) {
                        Ok(seq) => ServerFrame::Ack {
                            id: frame.id,
                            command: frame.command.name().to_string(),
                            seq,
                        },
                        Err(e) => ServerFrame::Error { id: frame.id, message: e.to_string() },
                    },
                };
                if !send(&mut socket, &reply).await {
                    break;
                }
            }
            frame = rx.recv() => {
                match frame {
                    Ok(f) if f.conversation_id() == Some(conv) => {
                        if !send(&mut socket, &f).await {
                            break;
                        }
                    }
                    Ok(_) => {}
                    Err(RecvError::Lagged(n)) => {
                        let msg = ServerFrame::Error {
                            id: None,
                            message: format!("missed {n} frames; resync from /events"),
                        };
                        if !send(&mut socket, &msg).await {
                            break;
                        }
                    }
                    Err(RecvError::Closed) => break,
                }
            }
        }
    }
}
