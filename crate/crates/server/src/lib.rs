//! HTTP front end for operator sessions.
//!
//! Routes:
//!
//! * `POST /sessions` with `{scenario, seed, start_step}`
//! * `GET /sessions/{id}/state`
//! * `GET /sessions/{id}/recommendations?n=`
//! * `POST /sessions/{id}/simulate/{rec}`
//! * `POST /sessions/{id}/confirm/{rec}`
//! * `GET /sessions/{id}/events`, a server-sent event stream of the session
//!   log that honours `Last-Event-ID`
//! * `GET /grid`, `GET /scenarios` and `GET /health` for clients
//!
//! Every body carries `version`. Errors are
//! `{"version", "error": {"category", "message"}}`.

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use gridzero::assist::{AssistError, CreateSession, Event, Session, SessionManager, PAYLOAD_VERSION};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::broadcast;

/// Events buffered per subscriber before it falls back to the session log.
pub const EVENT_BUFFER: usize = 256;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("address {addr} is already in use")]
    PortBusy { addr: String },
    #[error("cannot bind {addr}: {msg}")]
    Bind { addr: String, msg: String },
    #[error("server failed: {0}")]
    Io(String),
}

impl ServeError {
    pub fn category(&self) -> &'static str {
        match self {
            ServeError::PortBusy { .. } => "port_busy",
            ServeError::Bind { .. } => "bind",
            ServeError::Io(_) => "io",
        }
    }
}

struct AppState {
    manager: Arc<SessionManager>,
    channels: Mutex<HashMap<String, broadcast::Sender<Event>>>,
}

impl AppState {
    fn channel(&self, id: &str) -> Result<broadcast::Sender<Event>, AssistError> {
        self.channels.lock().expect("channel map lock").get(id).cloned().ok_or_else(|| AssistError::UnknownSession(id.to_string()))
    }
}

type Shared = Arc<AppState>;

struct ApiError(AssistError);

impl From<AssistError> for ApiError {
    fn from(e: AssistError) -> Self {
        ApiError(e)
    }
}

/// HTTP status for each assist error category.
pub fn status_of(e: &AssistError) -> StatusCode {
    match e {
        AssistError::UnknownSession(_) | AssistError::UnknownRecommendation(_) => StatusCode::NOT_FOUND,
        AssistError::Stale { .. } => StatusCode::CONFLICT,
        AssistError::Terminal(_) => StatusCode::GONE,
        AssistError::BadRequest(_) => StatusCode::BAD_REQUEST,
        AssistError::Env(_) | AssistError::Log(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "version": PAYLOAD_VERSION,
            "error": { "category": self.0.category(), "message": self.0.to_string() },
        });
        (status_of(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Body returned by `POST /sessions`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Created {
    pub version: u32,
    pub session: String,
    pub state: gridzero::assist::StateSnapshot,
}

#[derive(Debug, Deserialize)]
struct RecQuery {
    n: Option<usize>,
}

/// Run `f` on the locked session off the async workers.
async fn blocking<T: Send + 'static>(st: &Shared, id: String, f: impl FnOnce(&mut Session) -> Result<T, AssistError> + Send + 'static) -> Result<T, ApiError> {
    let manager = st.manager.clone();
    tokio::task::spawn_blocking(move || manager.with(&id, f)).await.map_err(|e| ApiError(AssistError::Log(format!("worker failed: {e}"))))?.map_err(ApiError)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "version": PAYLOAD_VERSION, "status": "ok" }))
}

async fn grid(State(st): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "version": PAYLOAD_VERSION, "grid": st.manager.spec().as_ref() }))
}

async fn scenarios(State(st): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "version": PAYLOAD_VERSION, "scenarios": st.manager.scenario_names() }))
}

async fn create(State(st): State<Shared>, body: Result<Json<CreateSession>, JsonRejection>) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(req) = body.map_err(|e| AssistError::BadRequest(e.body_text()))?;
    let (tx, _) = broadcast::channel(EVENT_BUFFER);
    let sink = tx.clone();
    let listener: gridzero::assist::Listener = Arc::new(move |e: &Event| {
        // no subscribers is fine; the log keeps everything
        let _ = sink.send(e.clone());
    });
    let manager = st.manager.clone();
    let handle =
        tokio::task::spawn_blocking(move || manager.create(&req, Some(listener))).await.map_err(|e| AssistError::Log(format!("worker failed: {e}")))??;
    let (id, state) = {
        let s = handle.lock().unwrap_or_else(|p| p.into_inner());
        (s.id().to_string(), s.state())
    };
    st.channels.lock().expect("channel map lock").insert(id.clone(), tx);
    Ok((StatusCode::CREATED, Json(Created { version: PAYLOAD_VERSION, session: id, state })))
}

async fn state(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<gridzero::assist::StateSnapshot> {
    Ok(Json(blocking(&st, id, |s| Ok(s.state())).await?))
}

async fn recommendations(State(st): State<Shared>, Path(id): Path<String>, Query(q): Query<RecQuery>) -> ApiResult<gridzero::assist::RecommendationList> {
    Ok(Json(blocking(&st, id, move |s| s.recommendations(q.n)).await?))
}

async fn simulate(State(st): State<Shared>, Path((id, rec)): Path<(String, String)>) -> ApiResult<gridzero::assist::SimulationReport> {
    Ok(Json(blocking(&st, id, move |s| s.simulate(&rec)).await?))
}

async fn confirm(State(st): State<Shared>, Path((id, rec)): Path<(String, String)>) -> ApiResult<gridzero::assist::ConfirmReport> {
    Ok(Json(blocking(&st, id, move |s| s.confirm(&rec)).await?))
}

/// Subscriber position: events are delivered in sequence order, at least
/// once, with gaps refilled from the session log.
struct Feed {
    rx: broadcast::Receiver<Event>,
    next: u64,
    queue: VecDeque<Event>,
    manager: Arc<SessionManager>,
    id: String,
}

fn sse_event(e: &Event) -> SseEvent {
    let data = serde_json::to_value(e).expect("event serializes");
    let kind = data.get("kind").and_then(|k| k.as_str()).unwrap_or("event").to_string();
    SseEvent::default().id(e.seq.to_string()).event(kind).data(data.to_string())
}

async fn events(
    State(st): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let from = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|v| v.trim().parse::<u64>().ok()).map_or(0, |seq| seq + 1);
    let tx = st.channel(&id)?;
    // subscribe under the session lock so no event falls between backlog and stream
    let (backlog, rx) = blocking(&st, id.clone(), move |s| Ok((s.events_since(from).to_vec(), tx.subscribe()))).await?;
    let feed = Feed { rx, next: from, queue: backlog.into(), manager: st.manager.clone(), id };
    let stream = futures::stream::unfold(feed, |mut f| async move {
        loop {
            if let Some(e) = f.queue.pop_front() {
                if e.seq < f.next {
                    continue;
                }
                f.next = e.seq + 1;
                return Some((Ok(sse_event(&e)), f));
            }
            match f.rx.recv().await {
                Ok(e) => f.queue.push_back(e),
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    let next = f.next;
                    match f.manager.with(&f.id, |s| Ok(s.events_since(next).to_vec())) {
                        Ok(missed) => f.queue.extend(missed),
                        Err(_) => return None,
                    }
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

/// The service routes over `manager`.
pub fn router(manager: Arc<SessionManager>) -> Router {
    let st = Arc::new(AppState { manager, channels: Mutex::new(HashMap::new()) });
    Router::new()
        .route("/health", get(health))
        .route("/grid", get(grid))
        .route("/scenarios", get(scenarios))
        .route("/sessions", post(create))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/recommendations", get(recommendations))
        .route("/sessions/{id}/simulate/{rec}", post(simulate))
        .route("/sessions/{id}/confirm/{rec}", post(confirm))
        .route("/sessions/{id}/events", get(events))
        .with_state(st)
}

/// Bind `addr`, naming the busy-port case.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortBusy { addr: addr.to_string() },
        _ => ServeError::Bind { addr: addr.to_string(), msg: e.to_string() },
    })
}

/// Serve until `shutdown` resolves.
pub async fn serve(listener: TcpListener, manager: Arc<SessionManager>, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
    axum::serve(listener, router(manager)).with_graceful_shutdown(shutdown).await.map_err(|e| ServeError::Io(e.to_string()))
}

/// Blocking entry point: bind, report the bound address, serve until Ctrl-C.
pub fn run(manager: SessionManager, addr: SocketAddr, on_ready: impl FnOnce(SocketAddr)) -> Result<(), ServeError> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| ServeError::Io(e.to_string()))?;
    rt.block_on(async move {
        let listener = bind(addr).await?;
        let local = listener.local_addr().map_err(|e| ServeError::Io(e.to_string()))?;
        on_ready(local);
        serve(listener, Arc::new(manager), async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}
