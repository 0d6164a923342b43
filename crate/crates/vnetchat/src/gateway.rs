//! HTTP gateway over the session store.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use vnetchat_core::allocator::{AllocError, ObjectiveTerms};
use vnetchat_core::control::ControlError;
use vnetchat_core::eval::{run_sweep, EvalError, MetricsRow};
use vnetchat_core::fixtures;
use vnetchat_core::intent::{load_dataset, Endpoints, Extraction, ExtractorKind, IntentError, IntentExtractor};
use vnetchat_core::model::{
    load_topology, users_from_specs, Allocation, Measurement, ModelError, ParamMap, Topology, UserId, UserSpec,
};
use vnetchat_core::session::{create_session, Session, SessionConfig, SessionError, StepResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    Conflict,
    Infeasible,
    UpstreamUnavailable,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict | ErrorCode::Infeasible => StatusCode::CONFLICT,
            ErrorCode::UpstreamUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            detail: None,
        }
    }

    fn bad(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::BadRequest, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<IntentError> for ApiError {
    fn from(e: IntentError) -> Self {
        let code = match e {
            IntentError::Transport(_) | IntentError::Unavailable(_) => ErrorCode::UpstreamUnavailable,
            _ => ErrorCode::BadRequest,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        let detail = match &e {
            ModelError::Validation(v) => serde_json::to_value(v).ok(),
            _ => None,
        };
        ApiError {
            code: ErrorCode::BadRequest,
            message: e.to_string(),
            detail,
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Model(m) => m.into(),
            SessionError::Intent(i) => i.into(),
            SessionError::InitialInfeasible | SessionError::Control(ControlError::StandingInfeasible) => {
                ApiError::new(ErrorCode::Infeasible, e.to_string())
            }
            SessionError::Control(ControlError::InvalidRates) | SessionError::Alloc(AllocError::MissingParams(_)) => {
                ApiError::bad(e.to_string())
            }
            SessionError::Unknown(_)
            | SessionError::VersionMismatch(_)
            | SessionError::CorruptPayload(_)
            | SessionError::Scenario(_) => ApiError::bad(e.to_string()),
            other => ApiError::new(ErrorCode::Internal, other.to_string()),
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Unavailable(_) => ApiError::new(ErrorCode::UpstreamUnavailable, e.to_string()),
            EvalError::Intent(i) => i.into(),
            other => ApiError::bad(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad(format!("invalid request body: {e}")))
}

#[derive(Debug, Clone, Default)]
pub struct ServeConfig {
    pub endpoints: Endpoints,
    /// Directory with the built console, served under `/`.
    pub static_dir: Option<PathBuf>,
    /// Period of automatic steps for sessions with pending prompts.
    pub auto_step_ms: Option<u64>,
}

impl ServeConfig {
    pub fn from_env() -> Self {
        ServeConfig {
            endpoints: Endpoints::from_env(),
            static_dir: std::env::var_os("VNET_CONSOLE_DIR").map(PathBuf::from),
            auto_step_ms: None,
        }
    }
}

struct SessionSlot {
    session: Mutex<Session>,
    stepping: AtomicBool,
}

struct StepGuard<'a>(&'a AtomicBool);

impl Drop for StepGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl SessionSlot {
    /// Runs one step unless another is in progress.
    fn step(&self, extractor: &dyn IntentExtractor) -> ApiResult<StepResult> {
        if self.stepping.swap(true, Ordering::AcqRel) {
            return Err(ApiError::new(ErrorCode::Conflict, "a step is already running for this session"));
        }
        let _guard = StepGuard(&self.stepping);
        // Work on a copy so reads and prompt submission stay responsive.
        let mut work = self.session.lock().unwrap().clone();
        let taken = work.pending.len();
        let result = work.run_step_with(extractor)?;
        let mut s = self.session.lock().unwrap();
        let later = s.pending.split_off(taken);
        *s = work;
        s.pending = later;
        Ok(result)
    }
}

type ExtractorKey = (ExtractorKind, Option<usize>);

/// Shared gateway state.
pub struct AppState {
    sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
    extractors: Mutex<HashMap<ExtractorKey, Arc<dyn IntentExtractor>>>,
    config: ServeConfig,
}

impl AppState {
    pub fn new(config: ServeConfig) -> Arc<Self> {
        Arc::new(AppState {
            sessions: Mutex::default(),
            extractors: Mutex::default(),
            config,
        })
    }

    /// Overrides the extractor used for `(kind, shots)`.
    pub fn set_extractor(&self, kind: ExtractorKind, shots: Option<usize>, e: Arc<dyn IntentExtractor>) {
        self.extractors.lock().unwrap().insert((kind, shots), e);
    }

    fn extractor(&self, kind: ExtractorKind, shots: Option<usize>) -> ApiResult<Arc<dyn IntentExtractor>> {
        if let Some(e) = self.extractors.lock().unwrap().get(&(kind, shots)) {
            return Ok(e.clone());
        }
        let config = SessionConfig {
            extractor: kind,
            shots,
            ..Default::default()
        };
        let e = config.extractor(&self.config.endpoints)?;
        self.extractors.lock().unwrap().insert((kind, shots), e.clone());
        Ok(e)
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<SessionSlot>> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(ErrorCode::NotFound, format!("no session {id}")))
    }

    fn insert(&self, s: Session) -> String {
        let id = s.id.clone();
        let slot = Arc::new(SessionSlot {
            session: Mutex::new(s),
            stepping: AtomicBool::new(false),
        });
        self.sessions.lock().unwrap().insert(id.clone(), slot);
        id
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?
}

/// A document given inline or by bundled fixture name.
#[derive(Deserialize)]
#[serde(untagged)]
enum DocRef {
    Name(String),
    Inline(Value),
}

impl DocRef {
    fn bytes(&self) -> ApiResult<Vec<u8>> {
        match self {
            DocRef::Name(n) => fixtures::by_name(n)
                .map(|s| s.as_bytes().to_vec())
                .ok_or_else(|| ApiError::bad(format!("unknown fixture '{n}'"))),
            DocRef::Inline(v) => Ok(serde_json::to_vec(v).expect("value serializes")),
        }
    }
}

#[derive(Deserialize)]
struct CreateRequest {
    topology: DocRef,
    users: DocRef,
    #[serde(default)]
    config: Option<SessionConfig>,
}

#[derive(Serialize)]
struct CreateResponse {
    session_id: String,
    standing: StepResult,
}

async fn create(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<CreateResponse>)> {
    let req: CreateRequest = parse(&body)?;
    let topology = load_topology(&req.topology.bytes()?)?;
    let specs: Vec<UserSpec> = parse(&req.users.bytes()?)?;
    let (users, params) = users_from_specs(&specs)?;
    let config = req.config.unwrap_or_default();
    let session = blocking(move || Ok(create_session(topology, users, params, config)?)).await?;
    let standing = session.initial.clone();
    let session_id = st.insert(session);
    Ok((StatusCode::CREATED, Json(CreateResponse { session_id, standing })))
}

#[derive(Deserialize)]
struct PromptRequest {
    user_id: UserId,
    text: String,
}

async fn submit(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let slot = st.slot(&id)?;
    let req: PromptRequest = parse(&body)?;
    let position = blocking(move || Ok(slot.session.lock().unwrap().submit_prompt(req.user_id, &req.text)?)).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "position": position }))))
}

async fn step(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<StepResult>> {
    let slot = st.slot(&id)?;
    let config = slot.session.lock().unwrap().config.clone();
    let extractor = {
        let st = st.clone();
        blocking(move || st.extractor(config.extractor, config.shots)).await?
    };
    Ok(Json(blocking(move || slot.step(extractor.as_ref())).await?))
}

#[derive(Serialize)]
struct StateView {
    session_id: String,
    k: usize,
    params: ParamMap,
    allocation: Allocation,
    measurement: Measurement,
    objective: f64,
    terms: ObjectiveTerms,
    pending: usize,
    config: SessionConfig,
    initial: StepResult,
    history: Vec<StepResult>,
}

async fn session_state(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<StateView>> {
    let slot = st.slot(&id)?;
    let s = slot.session.lock().unwrap();
    Ok(Json(StateView {
        session_id: s.id.clone(),
        k: s.chat_step,
        params: s.params.clone(),
        allocation: s.allocation.clone(),
        measurement: s.measurement.clone(),
        objective: s.objective,
        terms: s.terms,
        pending: s.pending.len(),
        config: s.config.clone(),
        initial: s.initial.clone(),
        history: s.history.clone(),
    }))
}

async fn topology(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Topology>> {
    let slot = st.slot(&id)?;
    let t = slot.session.lock().unwrap().topology.clone();
    Ok(Json(t))
}

async fn snapshot(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let slot = st.slot(&id)?;
    let bytes = slot.session.lock().unwrap().snapshot();
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

#[derive(Deserialize)]
struct InterpretRequest {
    text: String,
    #[serde(default = "keyword")]
    extractor: ExtractorKind,
    #[serde(default)]
    shots: Option<usize>,
}

fn keyword() -> ExtractorKind {
    ExtractorKind::Keyword
}

async fn interpret(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Extraction>> {
    let req: InterpretRequest = parse(&body)?;
    if req.text.trim().is_empty() {
        return Err(IntentError::EmptyPrompt.into());
    }
    let out = blocking(move || {
        let e = st.extractor(req.extractor, req.shots)?;
        Ok(e.extract(&req.text)?)
    })
    .await?;
    Ok(Json(out))
}

#[derive(Deserialize)]
struct EvalRequest {
    /// Fixture name or inline TSV text.
    #[serde(default = "default_dataset")]
    dataset: String,
    extractor: ExtractorKind,
    train_sizes: Vec<usize>,
    #[serde(default = "default_seed")]
    seed: u64,
}

fn default_dataset() -> String {
    "appendix_a".into()
}

fn default_seed() -> u64 {
    42
}

async fn eval(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Vec<MetricsRow>>> {
    let req: EvalRequest = parse(&body)?;
    let text = fixtures::by_name(&req.dataset).map_or(req.dataset.clone(), str::to_string);
    let data = load_dataset(text.as_bytes())?;
    if req.train_sizes.is_empty() {
        return Err(ApiError::bad("train_sizes is empty"));
    }
    let rows = blocking(move || Ok(run_sweep(&data, req.extractor, &req.train_sizes, req.seed, &st.config.endpoints)?))
        .await?;
    Ok(Json(rows))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError::new(ErrorCode::NotFound, "no such route")
}

async fn method_not_allowed() -> Response {
    let mut r = ApiError::bad("method not allowed").into_response();
    *r.status_mut() = StatusCode::METHOD_NOT_ALLOWED;
    r
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}/prompts", post(submit))
        .route("/api/sessions/{id}/step", post(step))
        .route("/api/sessions/{id}/state", get(session_state))
        .route("/api/sessions/{id}/topology", get(topology))
        .route("/api/sessions/{id}/snapshot", get(snapshot))
        .route("/api/interpret", post(interpret))
        .route("/api/eval", post(eval))
        .method_not_allowed_fallback(method_not_allowed);
    let app = match &state.config.static_dir {
        Some(dir) => api
            .route("/api/{*rest}", axum::routing::any(not_found))
            .fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    app.with_state(state)
}

/// Steps every session that has pending prompts, skipping busy ones.
fn auto_step(state: &Arc<AppState>) {
    let slots: Vec<Arc<SessionSlot>> = state.sessions.lock().unwrap().values().cloned().collect();
    for slot in slots {
        let config = {
            let s = slot.session.lock().unwrap();
            if s.pending.is_empty() {
                continue;
            }
            s.config.clone()
        };
        match state.extractor(config.extractor, config.shots) {
            Ok(e) => {
                if let Err(err) = slot.step(e.as_ref()) {
                    if err.code != ErrorCode::Conflict {
                        log::warn!("auto step failed: {}", err.message);
                    }
                }
            }
            Err(err) => log::warn!("auto step failed: {}", err.message),
        }
    }
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, config: ServeConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve_on(listener, config, shutdown_signal()).await
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

pub async fn serve_on(
    listener: tokio::net::TcpListener,
    config: ServeConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let state = AppState::new(config);
    serve_state(listener, state, shutdown).await
}

pub async fn serve_state(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Some(ms) = state.config.auto_step_ms.filter(|ms| *ms > 0) {
        let st = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_millis(ms));
            loop {
                tick.tick().await;
                let st = st.clone();
                let _ = tokio::task::spawn_blocking(move || auto_step(&st)).await;
            }
        });
    }
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
