//! Serves an in-process adapter over the adapter wire protocol. Jobs run
//! to completion before the submitting request returns; `GET
//! /v1/jobs/{id}` reports them afterwards.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use capsynth::adapter::{
    codes, decode_predict_request, encode_predict_response, parse_request, Adapter, AdapterError, ErrorBody,
    FinetuneRequest, JobState, JobStatus, SynthesizeRequest, TrainRequest, ENVELOPE_CONTENT_TYPE, PROTOCOL_VERSION,
};
use serde::Serialize;

#[derive(Clone)]
struct AppState {
    adapter: Arc<dyn Adapter>,
    jobs: Arc<Mutex<BTreeMap<String, JobStatus>>>,
}

fn error_response(e: &AdapterError) -> Response {
    let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (
        status,
        Json(ErrorBody {
            protocol_version: PROTOCOL_VERSION,
            error: e.to_remote(),
        }),
    )
        .into_response()
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, AdapterError> + Send + 'static,
) -> Result<T, AdapterError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(AdapterError::remote(codes::INTERNAL, e.to_string())))
}

async fn health(State(s): State<AppState>) -> Response {
    let adapter = s.adapter.clone();
    match blocking(move || adapter.health()).await {
        Ok(d) => Json(d).into_response(),
        Err(e) => error_response(&e),
    }
}

async fn run_job<R, T>(s: AppState, body: axum::body::Bytes, f: fn(&dyn Adapter, &R) -> Result<T, AdapterError>) -> Response
where
    R: serde::de::DeserializeOwned + Send + 'static,
    T: Serialize + Send + 'static,
{
    let req: R = match parse_request(&body) {
        Ok(r) => r,
        Err(e) => return error_response(&e),
    };
    let adapter = s.adapter.clone();
    let outcome = blocking(move || f(adapter.as_ref(), &req)).await;
    let job_id = ulid::Ulid::new().to_string();
    let status = match outcome {
        Ok(v) => JobStatus {
            protocol_version: PROTOCOL_VERSION,
            job_id: job_id.clone(),
            state: JobState::Succeeded,
            result: Some(serde_json::to_value(v).expect("result serializes")),
            error: None,
        },
        Err(e) => JobStatus {
            protocol_version: PROTOCOL_VERSION,
            job_id: job_id.clone(),
            state: JobState::Failed,
            result: None,
            error: Some(e.to_remote()),
        },
    };
    s.jobs.lock().expect("job lock").insert(job_id, status.clone());
    Json(status).into_response()
}

async fn train(State(s): State<AppState>, body: axum::body::Bytes) -> Response {
    run_job::<TrainRequest, _>(s, body, |a, r| a.train(r)).await
}

async fn finetune(State(s): State<AppState>, body: axum::body::Bytes) -> Response {
    run_job::<FinetuneRequest, _>(s, body, |a, r| a.finetune(r)).await
}

async fn synthesize(State(s): State<AppState>, body: axum::body::Bytes) -> Response {
    run_job::<SynthesizeRequest, _>(s, body, |a, r| a.synthesize(r)).await
}

async fn job(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    match s.jobs.lock().expect("job lock").get(&id) {
        Some(j) => Json(j.clone()).into_response(),
        None => error_response(&AdapterError::remote(codes::UNKNOWN_JOB, format!("no job {id}"))),
    }
}

async fn predict(State(s): State<AppState>, body: axum::body::Bytes) -> Response {
    let req = match decode_predict_request(&body) {
        Ok(r) => r,
        Err(e) => return error_response(&e),
    };
    let adapter = s.adapter.clone();
    match blocking(move || adapter.predict(&req)).await {
        Ok(preds) => ([(header::CONTENT_TYPE, ENVELOPE_CONTENT_TYPE)], encode_predict_response(&preds)).into_response(),
        Err(e) => error_response(&e),
    }
}

pub fn adapter_router(adapter: Arc<dyn Adapter>) -> Router {
    let state = AppState {
        adapter,
        jobs: Arc::new(Mutex::new(BTreeMap::new())),
    };
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/train", post(train))
        .route("/v1/finetune", post(finetune))
        .route("/v1/synthesize", post(synthesize))
        .route("/v1/jobs/{id}", get(job))
        .route("/v1/predict", post(predict))
        .layer(axum::extract::DefaultBodyLimit::max(256 << 20))
        .with_state(state)
}
