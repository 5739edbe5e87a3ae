//! Local HTTP service for exploring the two tuning knobs of a trained model.
//!
//! | method | path | result |
//! |--------|------|--------|
//! | POST | `/sessions` `{checkpoint, image, scale?}` | 201 `{session_id, trained_anchors, knob_bounds, packed_size}` |
//! | GET | `/sessions/{id}/preview?alpha1&alpha2&scale` | PNG at preview resolution |
//! | GET | `/sessions/{id}/export?alpha1&alpha2` | PNG at full resolution |
//! | GET | `/healthz` | `{status, sessions, models_loaded}` |
//!
//! Checkpoints and images are plain file names resolved inside two
//! allow-listed directories. Renders within a session are serialized; there
//! is no cancellation, a superseded preview simply finishes before the next.

mod error;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use contexp_core::model::{load_checkpoint, Anchor, Model};
use contexp_core::raw::{pack_bayer, KnobBounds, TuningKnobs, MAX_BRIGHTNESS_RATIO};
use contexp_core::sensor::format::read_raw;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

pub use error::ApiError;
pub use session::Session;

pub const DEFAULT_PORT: u16 = 8787;
pub const DEFAULT_PREVIEW_SCALE: f32 = 0.5;
/// Milliseconds spent in inference and PNG encoding for the response.
pub const LATENCY_HEADER: &str = "x-render-latency-ms";

#[derive(Clone, Debug)]
pub struct ServeConfig {
    /// Directory holding `.cxck` checkpoints.
    pub checkpoints: PathBuf,
    /// Directory holding `.lxrw` raw images.
    pub images: PathBuf,
    /// Widens the alpha2 range to [-0.5, 1.5].
    pub extrapolate: bool,
    pub preview_scale: f32,
}

impl ServeConfig {
    pub fn new(checkpoints: impl Into<PathBuf>, images: impl Into<PathBuf>) -> Self {
        Self {
            checkpoints: checkpoints.into(),
            images: images.into(),
            extrapolate: false,
            preview_scale: DEFAULT_PREVIEW_SCALE,
        }
    }

    pub fn bounds(&self) -> KnobBounds {
        KnobBounds::new(self.extrapolate)
    }
}

pub struct AppState {
    config: ServeConfig,
    sessions: RwLock<HashMap<u64, Arc<Mutex<Session>>>>,
    models: Mutex<HashMap<String, Arc<Model>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: ServeConfig) -> Arc<Self> {
        Arc::new(Self {
            config,
            sessions: RwLock::new(HashMap::new()),
            models: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &ServeConfig {
        &self.config
    }

    async fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions.read().await.get(&id).cloned().ok_or_else(|| ApiError::unknown_session(id))
    }

    async fn model(&self, name: &str, path: PathBuf) -> Result<Arc<Model>, ApiError> {
        if let Some(m) = self.models.lock().await.get(name) {
            return Ok(Arc::clone(m));
        }
        let bounds = self.config.bounds();
        let model = blocking(move || load_checkpoint(&path).map_err(|e| ApiError::from_core(e, bounds))).await?;
        let model = Arc::new(model);
        self.models.lock().await.insert(name.to_string(), Arc::clone(&model));
        Ok(model)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/preview", get(preview))
        .route("/sessions/{id}/export", get(export))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(config: ServeConfig, addr: SocketAddr) -> std::io::Result<()> {
    if !addr.ip().is_loopback() {
        log::warn!("binding {addr}: the service has no authentication");
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "serving on http://{} (checkpoints {}, images {})",
        listener.local_addr()?,
        config.checkpoints.display(),
        config.images.display()
    );
    axum::serve(listener, router(AppState::new(config))).await
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq)]
pub struct KnobBoundsBody {
    pub alpha1_min: f32,
    pub alpha1_max: f32,
    pub alpha2_min: f32,
    pub alpha2_max: f32,
}

#[derive(Deserialize, Debug)]
pub struct CreateSession {
    pub checkpoint: String,
    pub image: String,
    pub scale: Option<f32>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct SessionCreated {
    pub session_id: u64,
    pub trained_anchors: Vec<Anchor>,
    pub knob_bounds: KnobBoundsBody,
    /// Packed `[width, height]`; exports are twice this size.
    pub packed_size: [usize; 2],
}

#[derive(Deserialize, Debug, Clone, Copy)]
pub struct KnobQuery {
    pub alpha1: f32,
    pub alpha2: f32,
    pub scale: Option<f32>,
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let sessions = state.sessions.read().await.len();
    let models = state.models.lock().await.len();
    Json(serde_json::json!({ "status": "ok", "sessions": sessions, "models_loaded": models }))
}

/// Only bare file names inside the allow-listed directory are reachable.
fn resolve(dir: &Path, name: &str, kind: &str) -> Result<PathBuf, ApiError> {
    let plain = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
    let path = dir.join(name);
    if plain && path.is_file() {
        Ok(path)
    } else {
        Err(ApiError::unknown_asset(kind, name))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("render task failed: {e}")))?
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let bounds = state.config.bounds();
    let ck_path = resolve(&state.config.checkpoints, &req.checkpoint, "checkpoint")?;
    let img_path = resolve(&state.config.images, &req.image, "image")?;
    let scale = req.scale.unwrap_or(state.config.preview_scale);
    let model = state.model(&req.checkpoint, ck_path).await?;
    let packed =
        blocking(move || read_raw(&img_path).map(|raw| pack_bayer(&raw)).map_err(|e| ApiError::from_core(e, bounds)))
            .await?;
    session::check_compatible(&model, &packed, bounds)?;

    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let (w, h) = packed.size();
    let body = SessionCreated {
        session_id: id,
        trained_anchors: model.anchors.clone(),
        knob_bounds: KnobBoundsBody {
            alpha1_min: 1.0,
            alpha1_max: MAX_BRIGHTNESS_RATIO,
            alpha2_min: bounds.alpha2_min,
            alpha2_max: bounds.alpha2_max,
        },
        packed_size: [w, h],
    };
    let session = Session::new(id, req.checkpoint, req.image, model, packed, scale);
    state.sessions.write().await.insert(id, Arc::new(Mutex::new(session)));
    log::info!("session {id} created");
    Ok((StatusCode::CREATED, Json(body)))
}

fn knobs(state: &AppState, q: &KnobQuery) -> Result<TuningKnobs, ApiError> {
    let bounds = state.config.bounds();
    bounds.check(q.alpha1, q.alpha2).map_err(|e| ApiError::from_core(e, bounds))
}

fn png_response(bytes: Vec<u8>, started: Instant, filename: Option<String>) -> Response {
    let latency = format!("{:.1}", started.elapsed().as_secs_f64() * 1e3);
    let mut resp = (
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (header::CACHE_CONTROL, HeaderValue::from_static("no-store")),
        ],
        bytes,
    )
        .into_response();
    let headers = resp.headers_mut();
    headers.insert(LATENCY_HEADER, HeaderValue::from_str(&latency).expect("ascii"));
    if let Some(name) = filename {
        let value = format!("attachment; filename=\"{name}\"");
        headers.insert(header::CONTENT_DISPOSITION, HeaderValue::from_str(&value).expect("ascii"));
    }
    resp
}

async fn preview(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<u64>,
    Query(q): Query<KnobQuery>,
) -> Result<Response, ApiError> {
    let knobs = knobs(&state, &q)?;
    let bounds = state.config.bounds();
    let mut session = state.session(id).await?.lock_owned().await;
    let scale = q.scale.unwrap_or(session.preview_scale);
    let started = Instant::now();
    let bytes = blocking(move || session.render_preview(knobs, scale, bounds)).await?;
    Ok(png_response(bytes, started, None))
}

async fn export(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<u64>,
    Query(q): Query<KnobQuery>,
) -> Result<Response, ApiError> {
    let knobs = knobs(&state, &q)?;
    let bounds = state.config.bounds();
    let mut session = state.session(id).await?.lock_owned().await;
    let stem = session.image.trim_end_matches(".lxrw").to_string();
    let started = Instant::now();
    let bytes = blocking(move || session.render_export(knobs, bounds)).await?;
    let name = format!("{stem}_a1-{}_a2-{}.png", knobs.alpha1, knobs.alpha2);
    Ok(png_response(bytes, started, Some(name)))
}
