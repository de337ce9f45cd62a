//! HTTP session API.
//!
//! | Method | Path                     | Success | Errors            |
//! |--------|--------------------------|---------|-------------------|
//! | POST   | `/sessions`              | 201     | 400, 502, 504     |
//! | GET    | `/sessions`              | 200     |                   |
//! | GET    | `/sessions/{id}`         | 200     | 404               |
//! | POST   | `/sessions/{id}/step`    | 200     | 404, 409, 502     |
//! | POST   | `/sessions/{id}/feedback`| 204     | 400, 404, 409     |
//! | POST   | `/annotations`           | 204     | 422               |
//! | GET    | `/blobs/{id}`            | 200     | 404               |
//!
//! With a bearer token configured every route except `/blobs` requires
//! `Authorization: Bearer <token>`; blob ids are unguessable digests and
//! image tags cannot send headers.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backend::{BackendRegistry, RetryPolicy};
use crate::refine::{
    HumanFeedback, Prompt, RefineError, Refiner, SessionConfig, SessionStatus, Trajectory,
};
use crate::store::{Annotation, Store, StoreError};

pub const STEP_TIMEOUT: Duration = Duration::from_secs(120);

pub struct AppState {
    pub registry: BackendRegistry,
    pub store: Arc<Store>,
    pub retry: RetryPolicy,
    pub token: Option<String>,
    pub step_timeout: Duration,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(registry: BackendRegistry, store: Arc<Store>) -> Self {
        Self {
            registry,
            store,
            retry: RetryPolicy::default(),
            token: None,
            step_timeout: STEP_TIMEOUT,
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    fn lock_for(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut map = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(id.to_string()).or_default().clone()
    }

    fn busy(&self, id: &str) -> bool {
        let map = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        map.get(id).is_some_and(|l| l.try_lock().is_err())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewStatus {
    Running,
    AwaitingHuman,
    Finished,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub index: usize,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    pub image_url: String,
    pub blob_id: String,
    pub media_type: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub status: ViewStatus,
    pub original_prompt: String,
    pub rounds: Vec<RoundView>,
    #[serde(default)]
    pub human_feedback: Vec<HumanFeedback>,
    pub config: SessionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

impl SessionView {
    pub fn from_trajectory(t: &Trajectory, stepping: bool) -> Self {
        let status = match t.status {
            SessionStatus::Finished => ViewStatus::Finished,
            SessionStatus::Aborted => ViewStatus::Aborted,
            SessionStatus::Running if stepping => ViewStatus::Running,
            SessionStatus::Running => ViewStatus::AwaitingHuman,
        };
        Self {
            session_id: t.session_id.clone(),
            status,
            original_prompt: t.original_prompt.as_str().to_string(),
            rounds: t
                .rounds
                .iter()
                .map(|r| RoundView {
                    index: r.index,
                    prompt: r.prompt.as_str().to_string(),
                    feedback: r.feedback.as_ref().map(|f| f.as_str().to_string()),
                    image_url: format!("/blobs/{}", r.image.blob_id),
                    blob_id: r.image.blob_id.clone(),
                    media_type: r.image.media_type.mime().to_string(),
                    seed: r.image.seed,
                    critic_raw: r.critic_raw.clone(),
                    score: r.score,
                })
                .collect(),
            human_feedback: t.human_feedback.clone(),
            config: t.config.clone(),
            abort_reason: t.abort_reason.clone(),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<&'static str>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn field(mut self, field: &'static str) -> Self {
        self.field = Some(field);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(field) = self.field {
            body["field"] = json!(field);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
            StoreError::Rejected { .. } => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl From<RefineError> for ApiError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::SessionComplete(_) | RefineError::SessionAborted(_) => {
                ApiError::new(StatusCode::CONFLICT, e.to_string())
            }
            RefineError::Store(s) => s.into(),
            RefineError::BackendFailure { .. } | RefineError::MalformedCritique(_) | RefineError::PromptRejected(_) => {
                ApiError::new(StatusCode::BAD_GATEWAY, e.to_string())
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub prompt: String,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Deserialize)]
pub struct FeedbackBody {
    pub text: String,
    #[serde(default = "anonymous")]
    pub author: String,
}

fn anonymous() -> String {
    "anonymous".into()
}

#[derive(Debug, Deserialize)]
pub struct AnnotationBody {
    pub case_id: String,
    pub annotator_id: String,
    pub score: i64,
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/annotations", post(post_annotation))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/blobs/{id}", get(get_blob))
        .merge(api)
        .with_state(state)
}

async fn require_token(State(state): State<Arc<AppState>>, headers: HeaderMap, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response();
        }
    }
    next.run(request).await
}

/// Runs blocking loop work off the async runtime, bounded by the step
/// timeout.
async fn blocking<T: Send + 'static>(
    state: &AppState,
    work: impl FnOnce() -> Result<T, RefineError> + Send + 'static,
) -> ApiResult<T> {
    match tokio::time::timeout(state.step_timeout, tokio::task::spawn_blocking(work)).await {
        Err(_) => Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "step exceeded the server timeout")),
        Ok(Err(join)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, join.to_string())),
        Ok(Ok(result)) => result.map_err(ApiError::from),
    }
}

fn backends(
    state: &AppState,
    config: &SessionConfig,
) -> ApiResult<(Arc<dyn crate::backend::Generator>, Arc<dyn crate::backend::Critic>)> {
    let generator = state.registry.generator(&config.generator_id).ok_or_else(|| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("config.generator_id: unknown generator `{}`", config.generator_id),
        )
        .field("generator_id")
    })?;
    let critic = state.registry.critic(&config.critic_id).ok_or_else(|| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("config.critic_id: unknown critic `{}`", config.critic_id),
        )
        .field("critic_id")
    })?;
    Ok((generator, critic))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let prompt = Prompt::new(body.prompt)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("prompt: {e}")).field("prompt"))?;
    let (generator, critic) = backends(&state, &body.config)?;
    let store = state.store.clone();
    let retry = state.retry;
    let config = body.config;
    let traj = blocking(&state, move || {
        Refiner::new(generator.as_ref(), critic.as_ref(), &store)
            .with_retry(retry)
            .start(prompt, config)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(SessionView::from_trajectory(&traj, false))))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(state.store.session_ids()?))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let traj = state.store.load_trajectory(&id)?;
    Ok(Json(SessionView::from_trajectory(&traj, state.busy(&id))))
}

async fn step_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let lock = state.lock_for(&id);
    let guard = lock
        .try_lock_owned()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "a step is already in progress"))?;
    let traj = state.store.load_trajectory(&id)?;
    let (generator, critic) = backends(&state, &traj.config)?;
    let store = state.store.clone();
    let retry = state.retry;
    let next = blocking(&state, move || {
        let _guard = guard;
        Refiner::new(generator.as_ref(), critic.as_ref(), &store)
            .with_retry(retry)
            .step(&traj)
    })
    .await?;
    Ok(Json(SessionView::from_trajectory(&next, false)))
}

async fn post_feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<FeedbackBody>,
) -> ApiResult<StatusCode> {
    if body.text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "feedback text is empty").field("text"));
    }
    let lock = state.lock_for(&id);
    let _guard = lock
        .try_lock()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "a step is in progress"))?;
    let traj = state.store.load_trajectory(&id)?;
    let (generator, critic) = backends(&state, &traj.config)?;
    Refiner::new(generator.as_ref(), critic.as_ref(), &state.store).add_feedback(&traj, &body.author, &body.text)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn post_annotation(State(state): State<Arc<AppState>>, Json(body): Json<AnnotationBody>) -> ApiResult<StatusCode> {
    if !(0..=1).contains(&body.score) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("score must be 0 or 1, got {}", body.score)).field("score"));
    }
    if body.case_id.is_empty() || body.annotator_id.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "case_id and annotator_id are required"));
    }
    state.store.append_annotation(&Annotation {
        case_id: body.case_id,
        annotator_id: body.annotator_id,
        score: body.score as u8,
        timestamp_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64),
    })?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_blob(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let (entry, bytes) = state.store.get_blob(&id)?;
    Ok((
        [
            (header::CONTENT_TYPE, entry.media_type.mime()),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    )
        .into_response())
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state)).await
}
