//! HTTP session service. Endpoint paths, field names and error codes are
//! frozen in `protocol.md` at the repository root.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use anyhow::{bail, Context};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use pixseg_core::error::Error as CoreError;
use pixseg_core::io::{format_click_log, frame_png, read_sequence, SequenceMeta};
use pixseg_core::metrics::{evaluate_sequence, EvalOptions, SequenceScore};
use pixseg_core::session::{start_session, ClickOutcome, InteractiveSession, SessionConfig, SessionStats};
use pixseg_core::video::{Annotation, LabelMask, VideoTensor};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::model::Model;
use crate::rle;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub model_path: PathBuf,
    pub max_sessions: usize,
    /// Upper bound on `frames * height * width` for a session's video.
    pub max_video_pixels: usize,
}

impl ServiceConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.max_sessions == 0 || self.max_video_pixels == 0 {
            bail!("session limits must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VideoInfo {
    pub id: String,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub objects: u32,
    pub has_ground_truth: bool,
}

struct VideoEntry {
    info: VideoInfo,
    dir: PathBuf,
}

#[derive(Debug, Clone)]
struct PushEvent {
    name: &'static str,
    data: String,
}

struct SessionEntry {
    video_id: String,
    video: VideoTensor,
    gt: Option<Vec<LabelMask>>,
    session: RwLock<InteractiveSession>,
    events: broadcast::Sender<PushEvent>,
}

pub struct AppState {
    model: Model,
    videos: BTreeMap<String, VideoEntry>,
    sessions: RwLock<HashMap<String, Arc<SessionEntry>>>,
    next_id: AtomicU64,
    max_sessions: usize,
    max_video_pixels: usize,
}

impl AppState {
    /// Indexes every subdirectory of `data_dir` holding a `meta.txt`.
    pub fn new(model: Model, data_dir: &Path, max_sessions: usize, max_video_pixels: usize) -> anyhow::Result<Self> {
        let mut videos = BTreeMap::new();
        let entries = std::fs::read_dir(data_dir).with_context(|| format!("reading {}", data_dir.display()))?;
        for entry in entries {
            let dir = entry?.path();
            let Ok(text) = std::fs::read_to_string(dir.join("meta.txt")) else {
                continue;
            };
            let meta = SequenceMeta::parse(&text).with_context(|| format!("{}", dir.display()))?;
            let Some(id) = dir.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
                continue;
            };
            let info = VideoInfo {
                id: id.clone(),
                frame_count: meta.frame_count,
                height: meta.height,
                width: meta.width,
                objects: meta.objects,
                has_ground_truth: pixseg_core::io::mask_path(&dir, 0).exists(),
            };
            videos.insert(id, VideoEntry { info, dir });
        }
        Ok(Self {
            model,
            videos,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            max_sessions,
            max_video_pixels,
        })
    }

    fn session(&self, id: &str) -> Result<Arc<SessionEntry>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(what: String) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }

    fn insufficient() -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "insufficient_references",
            "masks need at least one background and one object reference",
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

fn click_error(e: CoreError) -> ApiError {
    match e {
        CoreError::OutOfBounds { .. } | CoreError::FrameOutOfRange { .. } | CoreError::LabelOutOfRange { .. } => {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_annotation", e.to_string())
        }
        other => ApiError::internal(other),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CreateSessionRequest {
    pub video_id: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub adapt: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub video_id: String,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub objects: u32,
    pub k: usize,
    pub adapt: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ClickRequest {
    pub frame: usize,
    pub row: usize,
    pub col: usize,
    pub label: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScribbleRequest {
    pub frame: usize,
    pub label: u32,
    /// Polyline vertices as `[row, col]`.
    pub points: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClickResponse {
    /// Number of annotations in the log after this request.
    pub clicks: usize,
    pub changed_cells: usize,
    pub changed_frames: Vec<usize>,
    pub distance_evaluations: u64,
    pub masks_ready: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameMask {
    pub frame: usize,
    pub rle: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MasksResponse {
    pub height: usize,
    pub width: usize,
    pub frames: Vec<FrameMask>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsResponse {
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    pub frames: Vec<usize>,
    pub per_frame_j: Vec<f64>,
    pub per_frame_f: Vec<f64>,
}

impl From<SequenceScore> for MetricsResponse {
    fn from(s: SequenceScore) -> Self {
        Self {
            mean_j: s.mean_j,
            mean_f: s.mean_f,
            mean_jf: s.mean_jf,
            frames: s.frames,
            per_frame_j: s.per_frame_j,
            per_frame_f: s.per_frame_f,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MasksEvent {
    pub clicks: usize,
    pub changed_frames: Vec<usize>,
    /// Masks of `changed_frames`; empty until masks are ready.
    pub frames: Vec<FrameMask>,
}

#[derive(Debug, Deserialize)]
struct MaskQuery {
    frame: Option<usize>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/videos", get(list_videos))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(session_info).delete(delete_session))
        .route("/api/sessions/{id}/frames/{index}", get(get_frame))
        .route("/api/sessions/{id}/clicks", post(post_click).get(get_clicks))
        .route("/api/sessions/{id}/scribbles", post(post_scribble))
        .route("/api/sessions/{id}/masks", get(get_masks))
        .route("/api/sessions/{id}/metrics", get(get_metrics))
        .route("/api/sessions/{id}/reset", post(reset_session))
        .route("/api/sessions/{id}/stats", get(get_stats))
        .route("/api/sessions/{id}/events", get(events))
        .fallback(|| async { ApiError::not_found("route".into()) })
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn list_videos(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let videos: Vec<&VideoInfo> = state.videos.values().map(|v| &v.info).collect();
    Json(serde_json::json!({ "videos": videos }))
}

fn describe(id: &str, entry: &SessionEntry) -> CreateSessionResponse {
    let s = entry.session.read().unwrap();
    let c = s.config();
    CreateSessionResponse {
        session_id: id.to_string(),
        video_id: entry.video_id.clone(),
        frame_count: s.frame_count(),
        height: s.height(),
        width: s.width(),
        objects: c.num_objects,
        k: c.k,
        adapt: c.adapt,
    }
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSessionRequest>,
) -> Result<(StatusCode, Json<CreateSessionResponse>), ApiError> {
    let video = state
        .videos
        .get(&req.video_id)
        .ok_or_else(|| ApiError::not_found(format!("video {}", req.video_id)))?;
    let info = &video.info;
    let pixels = info.frame_count * info.height * info.width;
    if pixels > state.max_video_pixels {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "video_too_large",
            format!("video has {pixels} pixels, limit is {}", state.max_video_pixels),
        ));
    }
    let at_limit = || state.sessions.read().unwrap().len() >= state.max_sessions;
    let limit_error = || {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "session_limit",
            format!("at most {} concurrent sessions", state.max_sessions),
        )
    };
    if at_limit() {
        return Err(limit_error());
    }
    let k = req.k.unwrap_or(1);
    if k == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", "k must be at least 1"));
    }
    let config = SessionConfig {
        embed: state.model.config.embed,
        k,
        num_objects: info.objects.max(1),
        adapt: req.adapt.unwrap_or(false),
        ..SessionConfig::default()
    };
    let dir = video.dir.clone();
    let params = state.model.params.clone();
    let (sequence, session) = tokio::task::spawn_blocking(move || -> Result<_, CoreError> {
        let sequence = read_sequence(&dir)?;
        let session = start_session(&sequence.video, &params, config)?;
        Ok((sequence, session))
    })
    .await
    .map_err(ApiError::internal)?
    .map_err(ApiError::internal)?;

    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let entry = Arc::new(SessionEntry {
        video_id: req.video_id.clone(),
        video: sequence.video,
        gt: sequence.masks,
        session: RwLock::new(session),
        events: broadcast::channel(64).0,
    });
    {
        let mut sessions = state.sessions.write().unwrap();
        if sessions.len() >= state.max_sessions {
            return Err(limit_error());
        }
        sessions.insert(id.clone(), entry.clone());
    }
    Ok((StatusCode::CREATED, Json(describe(&id, &entry))))
}

async fn session_info(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<CreateSessionResponse>, ApiError> {
    let entry = state.session(&id)?;
    Ok(Json(describe(&id, &entry)))
}

async fn delete_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    state
        .sessions
        .write()
        .unwrap()
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::not_found(format!("session {id}")))
}

async fn get_frame(
    State(state): State<Arc<AppState>>,
    UrlPath((id, index)): UrlPath<(String, usize)>,
) -> Result<Response, ApiError> {
    let entry = state.session(&id)?;
    if index >= entry.video.frame_count() {
        return Err(ApiError::not_found(format!("frame {index}")));
    }
    let png = frame_png(entry.video.frame(index)).map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

fn frame_masks(session: &InteractiveSession, frames: impl IntoIterator<Item = usize>) -> Vec<FrameMask> {
    let masks = session.current_masks();
    frames
        .into_iter()
        .map(|frame| FrameMask {
            frame,
            rle: rle::encode(&masks[frame]),
        })
        .collect()
}

/// Applies one mutation under the session's write lock, off the async
/// executor, then pushes the mask update to subscribers.
async fn mutate(
    entry: Arc<SessionEntry>,
    op: impl FnOnce(&mut InteractiveSession) -> Result<ClickOutcome, CoreError> + Send + 'static,
) -> Result<ClickResponse, ApiError> {
    tokio::task::spawn_blocking(move || {
        let mut session = entry.session.write().unwrap();
        let outcome = op(&mut session).map_err(click_error)?;
        let ready = session.has_sufficient_references();
        let response = ClickResponse {
            clicks: session.click_log().len(),
            changed_cells: outcome.changed_cells,
            changed_frames: outcome.changed_frames.clone(),
            distance_evaluations: outcome.distance_evaluations,
            masks_ready: ready,
        };
        let event = MasksEvent {
            clicks: response.clicks,
            changed_frames: outcome.changed_frames.clone(),
            frames: if ready {
                frame_masks(&session, outcome.changed_frames.iter().copied())
            } else {
                Vec::new()
            },
        };
        // sent under the lock so subscribers see updates in click order
        let _ = entry.events.send(PushEvent {
            name: "masks",
            data: serde_json::to_string(&event).expect("serializable"),
        });
        Ok(response)
    })
    .await
    .map_err(ApiError::internal)?
}

async fn post_click(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ClickRequest>,
) -> Result<Json<ClickResponse>, ApiError> {
    let entry = state.session(&id)?;
    let annotation = Annotation::click(req.frame, req.row, req.col, req.label);
    Ok(Json(mutate(entry, move |s| s.add_click(annotation)).await?))
}

async fn post_scribble(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ScribbleRequest>,
) -> Result<Json<ClickResponse>, ApiError> {
    let entry = state.session(&id)?;
    if req.points.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_annotation", "scribble has no points"));
    }
    let points: Vec<(usize, usize)> = req.points.iter().map(|&[r, c]| (r, c)).collect();
    Ok(Json(mutate(entry, move |s| s.add_scribble(req.frame, &points, req.label)).await?))
}

async fn get_clicks(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let entry = state.session(&id)?;
    let log = format_click_log(entry.session.read().unwrap().click_log());
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], log).into_response())
}

async fn get_masks(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<MaskQuery>,
) -> Result<Json<MasksResponse>, ApiError> {
    let entry = state.session(&id)?;
    let session = entry.session.read().unwrap();
    if !session.has_sufficient_references() {
        return Err(ApiError::insufficient());
    }
    let frames = match query.frame {
        Some(f) if f >= session.frame_count() => return Err(ApiError::not_found(format!("frame {f}"))),
        Some(f) => frame_masks(&session, [f]),
        None => frame_masks(&session, 0..session.frame_count()),
    };
    Ok(Json(MasksResponse {
        height: session.height(),
        width: session.width(),
        frames,
    }))
}

async fn get_metrics(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<MetricsResponse>, ApiError> {
    let entry = state.session(&id)?;
    let Some(gt) = &entry.gt else {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "no_ground_truth",
            format!("video {} has no ground-truth masks", entry.video_id),
        ));
    };
    let session = entry.session.read().unwrap();
    let masks = session.masks().map_err(|_| ApiError::insufficient())?;
    let score =
        evaluate_sequence(masks, gt, session.config().num_objects, EvalOptions::default()).map_err(ApiError::internal)?;
    Ok(Json(score.into()))
}

async fn reset_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionStats>, ApiError> {
    let entry = state.session(&id)?;
    let mut session = entry.session.write().unwrap();
    session.reset();
    let _ = entry.events.send(PushEvent {
        name: "reset",
        data: "{}".into(),
    });
    Ok(Json(session.stats()))
}

async fn get_stats(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionStats>, ApiError> {
    let entry = state.session(&id)?;
    let stats = entry.session.read().unwrap().stats();
    Ok(Json(stats))
}

async fn events(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = state.session(&id)?.events.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(e) => return Some((Ok(Event::default().event(e.name).data(e.data)), rx)),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    config.validate()?;
    let model = Model::load(&config.model_path)?;
    let state = AppState::new(model, &config.data_dir, config.max_sessions, config.max_video_pixels)?;
    eprintln!("{} videos in {}", state.videos.len(), config.data_dir.display());
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .with_context(|| format!("binding {}", config.listen))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    eprintln!("shut down");
    Ok(())
}
