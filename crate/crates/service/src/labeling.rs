//! Labeling service endpoints (protocol version 1):
//!
//! | method | path | purpose |
//! |---|---|---|
//! | GET | `/v1/health` | liveness |
//! | GET | `/v1/labeling/rules` | charset, excluded characters, length range |
//! | GET | `/v1/labeling/batch?round=&limit=&assignee=` | next tasks to label |
//! | GET | `/v1/labeling/tasks/{id}/image` | task image (PNG) |
//! | POST | `/v1/labeling/submit` | submit a label |
//! | GET | `/v1/labeling/progress?round=` | counts and confusion top-list |

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use capsynth::adapter::{BoardError, LabelBoard, TaskView, PROTOCOL_VERSION};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Clone)]
pub struct LabelingState {
    pub board: Arc<Mutex<LabelBoard>>,
    /// Board snapshot rewritten after every change.
    pub snapshot: Option<PathBuf>,
}

impl LabelingState {
    pub fn new(board: Arc<Mutex<LabelBoard>>) -> Self {
        Self { board, snapshot: None }
    }
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (
        status,
        Json(json!({
            "protocol_version": PROTOCOL_VERSION,
            "error": {"code": code, "message": message.into()},
        })),
    )
        .into_response()
}

fn board_error(e: BoardError) -> Response {
    match e {
        BoardError::UnknownTask(_) => error(StatusCode::NOT_FOUND, "unknown_task", e.to_string()),
        BoardError::Terminal { .. } => error(StatusCode::CONFLICT, "terminal_task", e.to_string()),
        BoardError::Snapshot { .. } => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

fn persist(state: &LabelingState, board: &LabelBoard) -> Result<(), Response> {
    match &state.snapshot {
        Some(path) => board.save(path).map_err(board_error),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct BatchTask {
    #[serde(flatten)]
    task: TaskView,
    image_url: String,
}

#[derive(Deserialize)]
struct BatchQuery {
    round: Option<u32>,
    limit: Option<usize>,
    assignee: Option<String>,
}

#[derive(Deserialize)]
struct RoundQuery {
    round: Option<u32>,
}

#[derive(Deserialize)]
struct SubmitBody {
    protocol_version: u32,
    task_id: String,
    label: String,
    #[serde(default)]
    submitter: Option<String>,
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"protocol_version": PROTOCOL_VERSION, "status": "ok", "service": "labeling"}))
}

async fn rules(State(s): State<LabelingState>) -> Json<serde_json::Value> {
    let board = s.board.lock().expect("board lock");
    Json(json!({"protocol_version": PROTOCOL_VERSION, "rules": board.rules()}))
}

async fn batch(State(s): State<LabelingState>, Query(q): Query<BatchQuery>) -> Response {
    let mut board = s.board.lock().expect("board lock");
    let assignee = q.assignee.unwrap_or_else(|| "anonymous".into());
    let tasks: Vec<BatchTask> = board
        .next_batch(q.round, q.limit.unwrap_or(20).clamp(1, 500), &assignee)
        .into_iter()
        .map(|task| BatchTask {
            image_url: format!("/v1/labeling/tasks/{}/image", task.task_id),
            task,
        })
        .collect();
    if let Err(r) = persist(&s, &board) {
        return r;
    }
    Json(json!({"protocol_version": PROTOCOL_VERSION, "tasks": tasks})).into_response()
}

async fn image(State(s): State<LabelingState>, Path(id): Path<String>) -> Response {
    let path = match s.board.lock().expect("board lock").task(&id) {
        Some(t) => t.image.clone(),
        None => return board_error(BoardError::UnknownTask(id)),
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, "image_missing", format!("{path}: {e}")),
    }
}

async fn submit(State(s): State<LabelingState>, body: axum::body::Bytes) -> Response {
    let body: SubmitBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()),
    };
    if body.protocol_version != PROTOCOL_VERSION {
        return error(
            StatusCode::BAD_REQUEST,
            "unsupported_version",
            format!("protocol_version {} unsupported", body.protocol_version),
        );
    }
    let mut board = s.board.lock().expect("board lock");
    let submitter = body.submitter.as_deref().unwrap_or("anonymous");
    match board.submit(&body.task_id, &body.label, submitter) {
        Ok(outcome) => {
            if let Err(r) = persist(&s, &board) {
                return r;
            }
            let mut v = serde_json::to_value(outcome).expect("outcome serializes");
            v["protocol_version"] = json!(PROTOCOL_VERSION);
            Json(v).into_response()
        }
        Err(e) => board_error(e),
    }
}

async fn progress(State(s): State<LabelingState>, Query(q): Query<RoundQuery>) -> Response {
    let board = s.board.lock().expect("board lock");
    let round = q.round.or_else(|| board.current_round()).unwrap_or(0);
    let mut v = serde_json::to_value(board.progress(round)).expect("progress serializes");
    v["protocol_version"] = json!(PROTOCOL_VERSION);
    Json(v).into_response()
}

pub fn labeling_router(state: LabelingState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/labeling/rules", get(rules))
        .route("/v1/labeling/batch", get(batch))
        .route("/v1/labeling/tasks/{id}/image", get(image))
        .route("/v1/labeling/submit", post(submit))
        .route("/v1/labeling/progress", get(progress))
        .with_state(state)
}
