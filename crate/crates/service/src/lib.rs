//! HTTP/JSON service over a fedfeed store: feeds, feedback, personas, posts,
//! interactions and federated training control.

mod error;

use std::collections::BTreeSet;
use std::future::Future;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::{FromRequest, FromRequestParts, State};
use axum::http::{HeaderValue, Method, StatusCode, Uri};
use axum::body::Bytes;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use fedfeed_core::api::{
    CreatePostRequest, FeedResponse, FeedbackRequest, FeedbackResponse, InteractionRequest, RoundRequest,
    TrainingStatus,
};
use fedfeed_core::pipeline::{self, ClientAssignment};
use fedfeed_core::{Config, InteractionEvent, PersonaProfile, Post, RoundReport, Store, TextResources, Verdict};
use serde::Deserialize;
use tokio::net::TcpListener;
use tower_http::catch_panic::CatchPanicLayer;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::AppError;

pub const DEFAULT_FEED_LIMIT: usize = 20;
pub const MAX_FEED_LIMIT: usize = 200;
pub const MAX_POST_CHARS: usize = 10_000;
pub const MAX_ROUNDS_PER_REQUEST: usize = 1000;

/// Shared handler state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    config: Arc<Config>,
    resources: Arc<TextResources>,
    state_path: Option<PathBuf>,
    assignment: ClientAssignment,
    training: Arc<AtomicBool>,
}

/// Held while a training run is active; dropping it frees the slot.
pub struct TrainingGuard(Arc<AtomicBool>);

impl Drop for TrainingGuard {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl AppState {
    /// `state_path`, when set, is rewritten after every successful write and on shutdown.
    pub fn new(store: Arc<Store>, config: Config, state_path: Option<PathBuf>) -> Result<Self, fedfeed_core::Error> {
        let resources = config.text_resources()?;
        Ok(Self {
            store,
            config: Arc::new(config),
            resources: Arc::new(resources),
            state_path,
            assignment: ClientAssignment::ByUser,
            training: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn with_assignment(mut self, assignment: ClientAssignment) -> Self {
        self.assignment = assignment;
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    /// Claims the single training slot, or `None` if a run is active.
    pub fn try_begin_training(&self) -> Option<TrainingGuard> {
        self.training
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| TrainingGuard(Arc::clone(&self.training)))
    }

    pub fn persist(&self) -> Result<(), fedfeed_core::storage::StorageError> {
        match &self.state_path {
            Some(path) => self.store.persist(path),
            None => Ok(()),
        }
    }
}

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(AppError))]
struct ApiJson<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(AppError))]
struct ApiQuery<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(AppError))]
struct ApiPath<T>(T);

pub fn router(state: AppState) -> Router {
    let cors = cors_layer(&state.config.cors_origins);
    Router::new()
        .route("/api/feed/{user_id}", get(get_feed))
        .route("/api/feedback", post(post_feedback))
        .route("/api/persona/{user_id}", get(get_persona))
        .route("/api/posts", post(post_post))
        .route("/api/interactions", post(post_interaction))
        .route("/api/federated/round", post(post_round))
        .route("/api/federated/status", get(get_status))
        .fallback(no_route)
        .method_not_allowed_fallback(no_method)
        .layer(CatchPanicLayer::custom(|_| AppError::internal("handler panicked").into_response()))
        .layer(cors)
        .with_state(state)
}

fn cors_layer(origins: &[String]) -> CorsLayer {
    let base = CorsLayer::new().allow_methods([Method::GET, Method::POST]).allow_headers(Any);
    if origins.iter().any(|o| o == "*") {
        return base.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    base.allow_origin(AllowOrigin::list(list))
}

/// Serves until `shutdown` resolves, then persists the store.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await?;
    tokio::task::spawn_blocking(move || state.persist())
        .await
        .map_err(std::io::Error::other)?
        .map_err(std::io::Error::other)
}

/// Resolves on SIGINT or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, AppError> + Send + 'static,
) -> Result<T, AppError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AppError::internal(format!("worker failed: {e}")))?
}

fn persist_after_write(state: &AppState) -> Result<(), AppError> {
    state.persist().map_err(|e| AppError::internal(format!("write applied but not persisted: {e}")))
}

async fn no_route(uri: Uri) -> AppError {
    AppError::not_found(format!("no route for {}", uri.path()))
}

async fn no_method(method: Method, uri: Uri) -> AppError {
    AppError::new(
        StatusCode::METHOD_NOT_ALLOWED,
        fedfeed_core::api::ErrorCode::Validation,
        format!("{method} is not allowed on {}", uri.path()),
    )
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedQuery {
    limit: Option<String>,
    exclude_negative: Option<String>,
    exclude_spam: Option<String>,
    category_whitelist: Option<String>,
}

fn parse_bool(name: &str, v: &str) -> Result<bool, AppError> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(AppError::validation(format!("{name} must be true or false, got {v:?}"))),
    }
}

async fn get_feed(
    State(state): State<AppState>,
    ApiPath(user_id): ApiPath<String>,
    ApiQuery(q): ApiQuery<FeedQuery>,
) -> Result<Json<FeedResponse>, AppError> {
    let limit = match q.limit.as_deref() {
        None => DEFAULT_FEED_LIMIT,
        Some(s) => match s.parse::<usize>() {
            Ok(n) if (1..=MAX_FEED_LIMIT).contains(&n) => n,
            _ => {
                return Err(AppError::validation(format!("limit must be an integer in 1..={MAX_FEED_LIMIT}, got {s:?}")))
            }
        },
    };
    let snap = state.store.snapshot();
    let mut settings = state.config.filter.clone();
    if let Some(v) = &q.exclude_negative {
        settings.exclude_negative = parse_bool("exclude_negative", v)?;
    }
    if let Some(v) = &q.exclude_spam {
        settings.exclude_spam = parse_bool("exclude_spam", v)?;
    }
    if let Some(list) = &q.category_whitelist {
        let cats: BTreeSet<String> =
            list.split(',').map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect();
        if let Some(bad) = cats.iter().find(|c| snap.categories.index_of(c).is_none()) {
            return Err(AppError::validation(format!("unknown category {bad:?}")));
        }
        settings.category_whitelist = Some(cats);
    }
    blocking(move || {
        Ok(pipeline::feed_for(&snap, &user_id, &state.config, &settings, &state.resources, limit)?)
    })
    .await
    .map(Json)
}

async fn post_feedback(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<FeedbackRequest>,
) -> Result<Json<FeedbackResponse>, AppError> {
    let verdict = match req.verdict.as_str() {
        "like" => Verdict::Like,
        "dislike" => Verdict::Dislike,
        other => return Err(AppError::validation(format!("verdict must be \"like\" or \"dislike\", got {other:?}"))),
    };
    blocking(move || {
        let out = state.store.write(|s| {
            let at = s.clock();
            pipeline::record_feedback(s, &req.user_id, &req.post_id, verdict, at, &state.config, &state.resources)
        })?;
        persist_after_write(&state)?;
        Ok(Json(out))
    })
    .await
}

async fn get_persona(
    State(state): State<AppState>,
    ApiPath(user_id): ApiPath<String>,
) -> Result<Json<PersonaProfile>, AppError> {
    let snap = state.store.snapshot();
    snap.user(&user_id)?;
    if let Some(p) = snap.profiles.get(&user_id) {
        return Ok(Json(p.clone()));
    }
    blocking(move || {
        let p = state
            .store
            .write(|s| pipeline::materialize_persona(s, &user_id, &state.config, &state.resources))?;
        Ok(Json(p))
    })
    .await
}

async fn post_post(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<CreatePostRequest>,
) -> Result<(StatusCode, Json<Post>), AppError> {
    if req.text.trim().is_empty() {
        return Err(AppError::validation("text must not be empty"));
    }
    let chars = req.text.chars().count();
    if chars > MAX_POST_CHARS {
        return Err(AppError::validation(format!("text has {chars} characters, at most {MAX_POST_CHARS} allowed")));
    }
    blocking(move || {
        let post = state.store.write(|s| -> Result<Post, fedfeed_core::Error> {
            let at = s.clock();
            let id = s.add_post(&req.author_id, &req.text, at)?.post_id.clone();
            let derived = pipeline::derive_post(s, &s.posts[&id], &state.resources)?;
            let post = s.posts.get_mut(&id).expect("just inserted");
            post.derived = Some(derived);
            Ok(post.clone())
        })?;
        persist_after_write(&state)?;
        Ok((StatusCode::CREATED, Json(post)))
    })
    .await
}

async fn post_interaction(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<InteractionRequest>,
) -> Result<(StatusCode, Json<InteractionEvent>), AppError> {
    blocking(move || {
        let ev = state.store.write(|s| {
            let ev = InteractionEvent {
                timestamp: req.timestamp.unwrap_or_else(|| s.clock()),
                user_id: req.user_id,
                post_id: req.post_id,
                kind: req.kind,
                comment_text: req.comment_text,
            };
            s.add_interaction(ev.clone()).map(|_| ev)
        })?;
        persist_after_write(&state)?;
        Ok((StatusCode::CREATED, Json(ev)))
    })
    .await
}

async fn post_round(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<Vec<RoundReport>>, AppError> {
    let req: RoundRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RoundRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| AppError::validation(format!("invalid round request: {e}")))?
    };
    let rounds = req.rounds.unwrap_or(state.config.train.rounds);
    if !(1..=MAX_ROUNDS_PER_REQUEST).contains(&rounds) {
        return Err(AppError::validation(format!("rounds must be in 1..={MAX_ROUNDS_PER_REQUEST}, got {rounds}")));
    }
    let guard = state.try_begin_training().ok_or_else(|| AppError::conflict("a training run is already active"))?;
    blocking(move || {
        let _guard = guard;
        let snap = state.store.snapshot();
        let mut train = state.config.train.clone();
        train.rounds = rounds;
        let outcome = pipeline::train_on_snapshot(&snap, &train, state.assignment)?;
        let acc = outcome.reports.last().map(|r| r.eval_acc);
        let n = outcome.reports.len() as u64;
        state.store.write(|s| s.swap_model(outcome.params, n, acc))?;
        persist_after_write(&state)?;
        Ok(Json(outcome.reports))
    })
    .await
}

async fn get_status(State(state): State<AppState>) -> Json<TrainingStatus> {
    let snap = state.store.snapshot();
    Json(TrainingStatus {
        current_round: snap.model.current_round,
        last_eval_acc: snap.model.last_eval_acc,
        model_version: snap.model.version,
        training: state.training.load(Ordering::Acquire),
    })
}
