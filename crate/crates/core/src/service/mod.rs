//! Live editing over HTTP and WebSocket.
//!
//! REST under `/api`, one stream per session at
//! `/api/session/{id}/stream`. Each session has a single worker thread that
//! owns its scene; handlers only queue commands and read snapshots.

mod session;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

pub use session::{Control, Session, SessionState};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::report::Inputs;

const STREAM_POLL: Duration = Duration::from_millis(10);

pub struct AppState {
    cfg: RunConfig,
    out: PathBuf,
    defaults: Arc<Inputs>,
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(cfg: RunConfig, out: PathBuf, defaults: Inputs) -> Self {
        Self {
            cfg,
            out,
            defaults: Arc::new(defaults),
            sessions: Mutex::new(BTreeMap::new()),
            counter: AtomicU64::new(0),
        }
    }

    /// Loads the startup artifacts. Configured paths that do not exist fail
    /// here, naming the path.
    pub fn load(cfg: RunConfig, out: &Path) -> Result<Self> {
        if let Some(d) = &cfg.service.static_dir {
            if !d.is_dir() {
                return Err(Error::MissingFile { path: d.clone() });
            }
        }
        let inputs = crate::cli::edit_inputs(&cfg, out)?;
        Ok(Self::new(cfg, out.to_path_buf(), inputs))
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    /// Stops every worker.
    pub fn shutdown(&self) {
        let all: Vec<_> = std::mem::take(&mut *self.sessions.lock().unwrap()).into_values().collect();
        for s in all {
            s.stop();
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/session", post(create_session))
        .route("/api/session/{id}/state", get(get_state))
        .route("/api/session/{id}/alpha", post(set_alpha))
        .route("/api/session/{id}/control", post(control))
        .route("/api/session/{id}/stream", get(stream))
        .with_state(state.clone());
    match &state.cfg.service.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `host:port` and serves until the process exits.
pub async fn serve(state: Arc<AppState>, host: &str, port: u16) -> Result<()> {
    let addr = format!("{host}:{port}");
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| Error::Server(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on http://{}", listener.local_addr().map_err(|e| Error::Server(e.to_string()))?);
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::Server(e.to_string()))
}

pub fn serve_blocking(cfg: &RunConfig, out: &Path, host: &str, port: u16) -> Result<()> {
    let state = Arc::new(AppState::load(cfg.clone(), out)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Server(format!("runtime: {e}")))?;
    let result = rt.block_on(serve(state.clone(), host, port));
    state.shutdown();
    result
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "type": "error", "message": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Json(_) | Error::Format { .. } => StatusCode::BAD_REQUEST,
            Error::MissingFile { .. } => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

type ApiResult = std::result::Result<Json<Value>, ApiError>;

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn find(state: &AppState, id: &str) -> std::result::Result<Arc<Session>, ApiError> {
    state
        .session(id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session {id}")))
}

/// Parses a JSON object body; an empty body is `{}`.
fn parse_body(body: &Bytes) -> std::result::Result<Value, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(json!({}));
    }
    let v: Value = serde_json::from_slice(body).map_err(|e| bad_request(format!("invalid JSON: {e}")))?;
    if v.is_object() {
        Ok(v)
    } else {
        Err(bad_request("body must be a JSON object"))
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let latest = state.sessions.lock().unwrap().keys().next_back().cloned();
    Json(json!({ "status": "ok", "session": latest }))
}

#[derive(Debug, Default, Deserialize)]
struct SessionRequest {
    scene: Option<PathBuf>,
    axis: Option<PathBuf>,
    adapter: Option<PathBuf>,
    config: Option<PathBuf>,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: SessionRequest =
        serde_json::from_value(parse_body(&body)?).map_err(|e| bad_request(format!("session request: {e}")))?;
    let st = state.clone();
    let session = tokio::task::spawn_blocking(move || -> Result<Session> {
        let custom = req.scene.is_some() || req.axis.is_some() || req.adapter.is_some() || req.config.is_some();
        let (cfg, inputs) = if custom {
            let mut cfg = match &req.config {
                Some(p) => RunConfig::load(p)?,
                None => st.cfg.clone(),
            };
            cfg.paths.scene = req.scene.or(cfg.paths.scene);
            cfg.paths.axis = req.axis.or(cfg.paths.axis);
            cfg.paths.adapter = req.adapter.or(cfg.paths.adapter);
            let inputs = Arc::new(crate::cli::edit_inputs(&cfg, &st.out)?);
            (cfg, inputs)
        } else {
            (st.cfg.clone(), st.defaults.clone())
        };
        let n = st.counter.fetch_add(1, Ordering::SeqCst) + 1;
        let svc = &st.cfg.service;
        Session::start(format!("s{n:04}"), inputs, &cfg.edit, svc.max_alpha, svc.frame_queue, svc.trace_ring)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let id = session.id().to_string();
    let replaced: Vec<Arc<Session>> = {
        let mut sessions = state.sessions.lock().unwrap();
        let old = if state.cfg.service.multi_session {
            Vec::new()
        } else {
            std::mem::take(&mut *sessions).into_values().collect()
        };
        sessions.insert(id.clone(), Arc::new(session));
        old
    };
    if !replaced.is_empty() {
        tokio::task::spawn_blocking(move || replaced.iter().for_each(|s| s.stop()));
    }
    Ok(Json(json!({ "id": id })))
}

async fn get_state(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let s = find(&state, &id)?;
    Ok(Json(serde_json::to_value(s.state()).map_err(Error::from)?))
}

fn alpha_of(v: &Value) -> std::result::Result<f64, ApiError> {
    match v.get("alpha") {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| bad_request("alpha is not a double")),
        Some(other) => Err(bad_request(format!("alpha must be a finite number, got {other}"))),
        None => Err(bad_request("missing alpha")),
    }
}

fn apply_alpha(s: &Session, v: &Value) -> ApiResult {
    let alpha = alpha_of(v)?;
    let changed = s.set_alpha(alpha)?;
    Ok(Json(json!({ "type": "ack", "id": s.id(), "alpha": alpha, "changed": changed })))
}

fn apply_control(s: &Session, v: &Value) -> ApiResult {
    let cmd = v.get("cmd").and_then(Value::as_str).ok_or_else(|| bad_request("missing cmd"))?;
    let c = Control::parse(cmd).ok_or_else(|| bad_request(format!("unknown cmd {cmd}")))?;
    s.control(c)?;
    Ok(Json(json!({ "type": "ack", "id": s.id(), "cmd": cmd })))
}

async fn set_alpha(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    let s = find(&state, &id)?;
    apply_alpha(&s, &parse_body(&body)?)
}

async fn control(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    let s = find(&state, &id)?;
    apply_control(&s, &parse_body(&body)?)
}

async fn stream(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    ws: WebSocketUpgrade,
) -> std::result::Result<Response, ApiError> {
    let s = find(&state, &id)?;
    Ok(ws.on_upgrade(move |socket| pump(socket, s)))
}

/// Reply to one client message.
fn client_message(s: &Session, text: &str) -> Value {
    let reply = match serde_json::from_str::<Value>(text) {
        Ok(v) => match v.get("type").and_then(Value::as_str) {
            Some("set_alpha") => apply_alpha(s, &v),
            Some("control") => apply_control(s, &v),
            Some(t) => Err(bad_request(format!("unknown message type {t}"))),
            None => Err(bad_request("message has no type")),
        },
        Err(e) => Err(bad_request(format!("invalid JSON: {e}"))),
    };
    match reply {
        Ok(Json(v)) => v,
        Err(ApiError(_, msg)) => json!({ "type": "error", "message": msg }),
    }
}

async fn pump(mut socket: WebSocket, s: Arc<Session>) {
    let mut tick = tokio::time::interval(STREAM_POLL);
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(t))) => {
                    let reply = client_message(&s, t.as_str());
                    if socket.send(Message::Text(reply.to_string().into())).await.is_err() {
                        return;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
            _ = tick.tick() => {
                for m in s.drain_messages() {
                    if socket.send(Message::Text(m.into())).await.is_err() {
                        return;
                    }
                }
            }
        }
    }
}
