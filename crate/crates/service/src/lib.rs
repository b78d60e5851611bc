//! REST and server-sent-event facade over training runs.
//!
//! | route | |
//! |---|---|
//! | `GET /health` | liveness |
//! | `POST /runs` | start a run from a flat JSON config |
//! | `GET /runs`, `GET /runs/{id}` | status, latest record, summary so far |
//! | `GET /runs/{id}/stream` | `snapshot`, then `episode` events, then one `status` event |
//! | `POST /runs/{id}/explain` | insight report over the current records |
//! | `POST /runs/{id}/stop` | cooperative stop at the next episode boundary |

mod registry;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::future::Future;
use std::sync::Arc;

use antijam_core::insights::summarize;
use antijam_core::{ConfigError, EpisodeRecord, RunStatus};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream, StreamExt};
use serde_json::{json, Value};

pub use registry::{ExplainError, Run, RunEvent, Service, ServiceConfig, ServiceError, StartError, Subscription, REPORT_FILE};

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn config_error(e: &ConfigError) -> Response {
    let fields: Vec<Value> = e
        .errors
        .iter()
        .map(|f| json!({ "field": f.field, "message": f.message }))
        .collect();
    (
        StatusCode::BAD_REQUEST,
        Json(json!({ "error": e.to_string(), "fields": fields })),
    )
        .into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("no run with id {id}"))
}

/// Flattens a JSON object body into the `key=value` pairs the config
/// parser expects. Arrays become comma-separated lists.
fn body_to_pairs(body: &[u8]) -> Result<BTreeMap<String, String>, ConfigError> {
    let value: Value = if body.iter().all(u8::is_ascii_whitespace) {
        json!({})
    } else {
        serde_json::from_slice(body).map_err(|e| ConfigError::single("body", format!("not valid JSON: {e}")))?
    };
    let Value::Object(obj) = value else {
        return Err(ConfigError::single("body", "expected a JSON object"));
    };
    let mut pairs = BTreeMap::new();
    let mut errors = Vec::new();
    for (k, v) in obj {
        let text = match v {
            Value::String(s) => Some(s),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    Value::Number(n) => Some(n.to_string()),
                    Value::String(s) => Some(s.clone()),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()
                .map(|parts| parts.join(",")),
            Value::Null | Value::Object(_) => None,
        };
        match text {
            Some(t) => {
                pairs.insert(k, t);
            }
            None => errors.push(antijam_core::FieldError {
                field: k,
                message: "expected a string, number, boolean or list".into(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(pairs)
    } else {
        Err(ConfigError { errors })
    }
}

fn run_view(run: &Run) -> Value {
    let log = run.snapshot();
    json!({
        "run_id": log.run_id,
        "status": log.status,
        "stop_requested": run.stop_requested() && !log.status.is_terminal(),
        "created_at": log.created_at,
        "failure": log.failure,
        "episodes": log.records.len(),
        "config": log.config.to_kv(),
        "latest": log.records.last(),
        "summary": summarize(&log).ok(),
    })
}

async fn health(State(svc): State<Arc<Service>>) -> Json<Value> {
    Json(json!({ "status": "ok", "runs": svc.list().len() }))
}

async fn create_run(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let pairs = match body_to_pairs(&body) {
        Ok(p) => p,
        Err(e) => return config_error(&e),
    };
    match svc.start_run(&pairs) {
        Ok(run) => (StatusCode::ACCEPTED, Json(json!({ "run_id": run.id() }))).into_response(),
        Err(StartError::Invalid(e)) => config_error(&e),
        Err(e @ StartError::AtCapacity(_)) => error(StatusCode::TOO_MANY_REQUESTS, e.to_string()),
        Err(e @ StartError::Io(_)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn list_runs(State(svc): State<Arc<Service>>) -> Json<Value> {
    let runs: Vec<Value> = svc
        .list()
        .iter()
        .map(|r| {
            let log = r.snapshot();
            json!({
                "run_id": log.run_id,
                "status": log.status,
                "created_at": log.created_at,
                "episodes": log.records.len(),
                "latest": log.records.last(),
            })
        })
        .collect();
    Json(json!({ "runs": runs }))
}

async fn get_run(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    match svc.get(&id) {
        Some(run) => Json(run_view(&run)).into_response(),
        None => not_found(&id),
    }
}

fn episode_event(r: &EpisodeRecord) -> Event {
    Event::default()
        .event("episode")
        .id(r.index.to_string())
        .data(serde_json::to_string(r).expect("record serializes"))
}

fn status_event(status: RunStatus) -> Event {
    Event::default()
        .event("status")
        .data(json!({ "status": status }).to_string())
}

fn event_stream(sub: Subscription) -> impl Stream<Item = Result<Event, Infallible>> {
    let snapshot = Event::default().event("snapshot").data(
        json!({ "status": sub.status, "records": sub.snapshot }).to_string(),
    );
    let head = stream::iter([snapshot]);
    let tail = match sub.events {
        None => stream::iter(vec![status_event(sub.status)]).left_stream(),
        Some(rx) => stream::unfold((rx, false), |(mut rx, done)| async move {
            if done {
                return None;
            }
            match rx.recv().await? {
                RunEvent::Episode(r) => Some((episode_event(&r), (rx, false))),
                RunEvent::Status(s) => Some((status_event(s), (rx, true))),
            }
        })
        .right_stream(),
    };
    head.chain(tail).map(Ok)
}

async fn stream_run(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    match svc.get(&id) {
        Some(run) => Sse::new(event_stream(run.subscribe()))
            .keep_alive(KeepAlive::default())
            .into_response(),
        None => not_found(&id),
    }
}

async fn explain_run(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    let Some(run) = svc.get(&id) else {
        return not_found(&id);
    };
    let result = tokio::task::spawn_blocking(move || svc.explain(&run)).await;
    match result {
        Ok(Ok(report)) => Json(report).into_response(),
        Ok(Err(e @ ExplainError::NoRecords)) => error(StatusCode::CONFLICT, e.to_string()),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn stop_run(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    match svc.get(&id) {
        Some(run) => {
            if !run.status().is_terminal() {
                run.request_stop();
            }
            Json(run_view(&run)).into_response()
        }
        None => not_found(&id),
    }
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/stream", get(stream_run))
        .route("/runs/{id}/explain", post(explain_run))
        .route("/runs/{id}/stop", post(stop_run))
        .with_state(svc)
}

/// Serves until `shutdown` resolves, then stops every live run (which also
/// ends their event streams) and waits for the training threads.
pub async fn serve(
    listener: tokio::net::TcpListener,
    svc: Arc<Service>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let stopper = svc.clone();
    axum::serve(listener, router(svc.clone()))
        .with_graceful_shutdown(async move {
            shutdown.await;
            tracing::info!("shutting down; stopping live runs");
            stopper.stop_all();
        })
        .await?;
    tokio::task::spawn_blocking(move || svc.shutdown())
        .await
        .map_err(std::io::Error::other)
}
