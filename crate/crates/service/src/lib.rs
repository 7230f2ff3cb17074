//! Session-oriented HTTP API over the component replacement loop.

pub mod config;
pub mod error;
pub mod generator;
pub mod session;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{FromRequest, Multipart, Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use casement_core::pipeline::{self, Building, LocalizedComponent, ModelSummary};
use casement_core::segmentation::{DepthBand, MaskProviderConfig};
use casement_core::{Camera, Catalog, FusionReport, ReplacementPlan, ScalingMode, SketchImage, Warning};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

pub use config::ServiceConfig;
pub use error::{ApiError, ErrorBody};
pub use generator::{generate_model, GeneratorProviderConfig};
pub use session::{Session, SessionInfo, SessionStatus};

/// Upper bound on request bodies (models and rasters).
pub const BODY_LIMIT: usize = 256 * 1024 * 1024;

pub struct AppState {
    pub config: ServiceConfig,
    /// Shared read-only by every session.
    pub catalog: Option<Arc<Catalog>>,
    sessions: Mutex<HashMap<String, Arc<RwLock<Session>>>>,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    pub fn new(config: ServiceConfig, catalog: Option<Arc<Catalog>>) -> SharedState {
        Arc::new(Self {
            config,
            catalog,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    /// Loads the configured catalog, if any.
    pub fn from_config(config: ServiceConfig) -> Result<(SharedState, Vec<Warning>), casement_core::Error> {
        let (catalog, warnings) = match &config.catalog {
            Some(path) => {
                let (c, w) = Catalog::load(path)?;
                (Some(Arc::new(c)), w)
            }
            None => (None, Vec::new()),
        };
        Ok((Self::new(config, catalog), warnings))
    }

    pub fn create_session(&self) -> Result<String, ApiError> {
        let mut sessions = self.sessions.lock().expect("session table poisoned");
        if sessions.len() >= self.config.max_sessions {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "CapacityExceeded",
                format!("session limit {} reached", self.config.max_sessions),
            ));
        }
        let id = loop {
            let id = format!("{:016x}", rand::random::<u64>());
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        sessions.insert(id.clone(), Arc::new(RwLock::new(Session::new(id.clone()))));
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Result<Arc<RwLock<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    pub fn remove_session(&self, id: &str) -> Result<(), ApiError> {
        self.sessions
            .lock()
            .expect("session table poisoned")
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.lock().expect("session table poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Writes `<dir>/<id>/session.json` and, for sessions with a model, `model.glb`.
    pub async fn snapshot(&self, dir: &Path) -> std::io::Result<usize> {
        let sessions: Vec<Arc<RwLock<Session>>> =
            self.sessions.lock().expect("session table poisoned").values().cloned().collect();
        for s in &sessions {
            let s = s.read().await;
            let sub = dir.join(&s.id);
            std::fs::create_dir_all(&sub)?;
            std::fs::write(sub.join("session.json"), serde_json::to_vec_pretty(&s.info())?)?;
            if let Some(b) = &s.building {
                let glb = b.to_glb().map_err(|e| std::io::Error::other(e.to_string()))?;
                std::fs::write(sub.join("model.glb"), glb)?;
            }
        }
        Ok(sessions.len())
    }
}

/// Runs `f` on a blocking thread while holding the session's writer lock, so mutations of
/// one session are serialized and never observed half-applied.
async fn with_write<T, F>(state: &SharedState, id: &str, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session, &AppState) -> Result<T, ApiError> + Send + 'static,
{
    let mut guard = state.session(id)?.write_owned().await;
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&mut guard, &state))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

async fn with_read<T, F>(state: &SharedState, id: &str, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Session, &AppState) -> Result<T, ApiError> + Send + 'static,
{
    let guard = state.session(id)?.read_owned().await;
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&guard, &state))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

/// Named parts of a multipart body, or the raw body when the request is not multipart.
async fn multipart_fields(req: Request) -> Result<Result<BTreeMap<String, Bytes>, Bytes>, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        let body = axum::body::to_bytes(req.into_body(), BODY_LIMIT)
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        return Ok(Err(body));
    }
    let mut multipart = Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut fields = BTreeMap::new();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_owned();
        let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
        fields.insert(name, data);
    }
    Ok(Ok(fields))
}

fn text_field(fields: &BTreeMap<String, Bytes>, name: &str) -> Result<Option<String>, ApiError> {
    fields
        .get(name)
        .map(|b| {
            String::from_utf8(b.to_vec()).map_err(|_| ApiError::bad_request(format!("field `{name}` is not UTF-8")))
        })
        .transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub summary: ModelSummary,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub camera: Camera,
    pub width: u32,
    pub height: u32,
    /// Grayscale PNG, base64; near is bright, background black.
    pub png: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub prompt: String,
    /// Overrides the configured mask provider.
    #[serde(default)]
    pub provider: Option<MaskProviderConfig>,
    #[serde(default)]
    pub band: Option<DepthBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub components: Vec<LocalizedComponent>,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveRequest {
    /// PNG, base64. Ink is any pixel brighter than 127.
    pub sketch: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default = "default_true")]
    pub thumbnails: bool,
}

fn default_top_k() -> usize {
    5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub rank: usize,
    pub component_id: u32,
    pub score: f64,
    pub name: String,
    pub category: String,
    pub tags: Vec<String>,
    /// Front line art PNG, base64.
    pub thumbnail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewRequest {
    pub target: usize,
    pub component_id: u32,
    #[serde(default)]
    pub mode: ScalingMode,
    #[serde(default)]
    pub inflation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub plan: ReplacementPlan,
    pub report: FusionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRequest {
    pub plan: ReplacementPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitResponse {
    pub report: FusionReport,
    pub summary: ModelSummary,
    pub history_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndoResponse {
    pub summary: ModelSummary,
    pub history_len: usize,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct RenderQuery {
    pub yaw: Option<f64>,
    pub elev: Option<f64>,
}

async fn create_session(State(state): State<SharedState>) -> Result<(StatusCode, Json<CreatedSession>), ApiError> {
    let id = state.create_session()?;
    Ok((StatusCode::CREATED, Json(CreatedSession { id })))
}

async fn get_session(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionInfo>, ApiError> {
    let session = state.session(&id)?;
    let info = match session.try_read() {
        Ok(s) => s.info(),
        Err(_) => SessionInfo {
            id,
            status: SessionStatus::Busy,
            model: None,
            camera: None,
            detected: Vec::new(),
            history_len: 0,
        },
    };
    Ok(Json(info))
}

async fn delete_session(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
) -> Result<StatusCode, ApiError> {
    state.remove_session(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

/// Multipart with a `glb` part, or an `image` part (plus an optional `provider` JSON part)
/// for the generator provider. A non-multipart body is taken as GLB bytes.
async fn upload_model(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
    req: Request,
) -> Result<Json<ModelResponse>, ApiError> {
    state.session(&id)?;
    enum Source {
        Glb(Bytes),
        Image(Bytes, GeneratorProviderConfig),
    }
    let source = match multipart_fields(req).await? {
        Err(body) => Source::Glb(body),
        Ok(fields) => {
            if let Some(glb) = fields.get("glb") {
                Source::Glb(glb.clone())
            } else if let Some(image) = fields.get("image") {
                let provider = match text_field(&fields, "provider")? {
                    Some(json) => serde_json::from_str(&json)
                        .map_err(|e| ApiError::bad_request(format!("provider: {e}")))?,
                    None => state.config.generator_provider.clone().ok_or_else(|| {
                        ApiError::precondition("no generator provider is configured")
                    })?,
                };
                Source::Image(image.clone(), provider)
            } else {
                return Err(ApiError::bad_request("expected a `glb` or `image` part"));
            }
        }
    };
    with_write(&state, &id, move |session, state| {
        let glb = match source {
            Source::Glb(bytes) => bytes.to_vec(),
            Source::Image(image, provider) => generate_model(&image, &provider)?,
        };
        let building = Building::from_glb(&glb)?;
        let summary = session.set_model(building, &state.config.view)?;
        let camera = session.camera.clone().expect("set_model sets the camera");
        Ok(Json(ModelResponse { summary, camera }))
    })
    .await
}

async fn render(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RenderQuery>,
) -> Result<Json<RenderResponse>, ApiError> {
    with_write(&state, &id, move |session, state| {
        let (camera, depth) = session.render(q.yaw, q.elev, &state.config.view)?;
        Ok(Json(RenderResponse {
            width: depth.width,
            height: depth.height,
            png: B64.encode(pipeline::view_png(&depth)),
            camera,
        }))
    })
    .await
}

async fn segment(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SegmentRequest>,
) -> Result<Json<SegmentResponse>, ApiError> {
    with_write(&state, &id, move |session, state| {
        let provider = req
            .provider
            .or_else(|| state.config.mask_provider.clone())
            .ok_or_else(|| ApiError::precondition("no mask provider is configured"))?;
        let band = req.band.unwrap_or(state.config.band);
        let (components, warnings) = session.segment(&req.prompt, &provider, band)?;
        Ok(Json(SegmentResponse { components, warnings }))
    })
    .await
}

fn decode_b64(text: &str, what: &str) -> Result<Vec<u8>, ApiError> {
    B64.decode(text.trim())
        .map_err(|e| ApiError::bad_request(format!("{what}: {e}")))
}

/// JSON `RetrieveRequest`, or multipart with a `sketch` part and optional `top_k`,
/// `category` and `thumbnails` parts.
async fn retrieve(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
    req: Request,
) -> Result<Json<RetrieveResponse>, ApiError> {
    state.session(&id)?;
    let (png, top_k, category, thumbnails) = match multipart_fields(req).await? {
        Err(body) => {
            let r: RetrieveRequest =
                serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
            (decode_b64(&r.sketch, "sketch")?, r.top_k, r.category, r.thumbnails)
        }
        Ok(fields) => {
            let png = fields
                .get("sketch")
                .ok_or_else(|| ApiError::bad_request("expected a `sketch` part"))?
                .to_vec();
            let top_k = match text_field(&fields, "top_k")? {
                Some(t) => t.trim().parse().map_err(|_| ApiError::bad_request("top_k"))?,
                None => default_top_k(),
            };
            let thumbnails = text_field(&fields, "thumbnails")?.is_none_or(|t| t.trim() != "false");
            (png, top_k, text_field(&fields, "category")?, thumbnails)
        }
    };
    with_read(&state, &id, move |_, state| {
        let catalog = state
            .catalog
            .as_deref()
            .ok_or_else(|| ApiError::precondition("no catalog is loaded"))?;
        let sketch = SketchImage::from_png(&png)?;
        let ranked = catalog.index.query(&sketch, top_k.max(1), category.as_deref())?;
        let candidates = ranked
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let record = catalog.manifest.record(r.component_id);
                let thumbnail = if thumbnails {
                    Some(B64.encode(pipeline::component_thumbnail(catalog, r.component_id)?))
                } else {
                    None
                };
                Ok(Candidate {
                    rank: i + 1,
                    component_id: r.component_id,
                    score: r.score,
                    name: record.map(|r| r.name.clone()).unwrap_or_default(),
                    category: record.map(|r| r.category.clone()).unwrap_or_default(),
                    tags: record.map(|r| r.tags.clone()).unwrap_or_default(),
                    thumbnail,
                })
            })
            .collect::<Result<_, ApiError>>()?;
        Ok(Json(RetrieveResponse { candidates }))
    })
    .await
}

async fn preview(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<PreviewRequest>,
) -> Result<Json<PreviewResponse>, ApiError> {
    with_read(&state, &id, move |session, state| {
        let inflation = req.inflation.unwrap_or(casement_core::replacement::DEFAULT_INFLATION);
        let (plan, report) =
            session.preview(state.catalog.as_deref(), req.target, req.component_id, req.mode, inflation)?;
        Ok(Json(PreviewResponse { plan, report }))
    })
    .await
}

async fn commit(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<CommitRequest>,
) -> Result<Json<CommitResponse>, ApiError> {
    with_write(&state, &id, move |session, state| {
        let (report, summary) = session.commit(state.catalog.as_deref(), req.plan, state.config.history_depth)?;
        Ok(Json(CommitResponse {
            report,
            summary,
            history_len: session.history.len(),
        }))
    })
    .await
}

async fn undo(
    State(state): State<SharedState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<UndoResponse>, ApiError> {
    with_write(&state, &id, move |session, _| {
        let summary = session.undo()?;
        Ok(Json(UndoResponse {
            summary,
            history_len: session.history.len(),
        }))
    })
    .await
}

async fn export(State(state): State<SharedState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let glb = with_read(&state, &id, |session, _| session.export()).await?;
    Ok(([(header::CONTENT_TYPE, "model/gltf-binary")], glb).into_response())
}

/// Decodes a sketch raster exactly as `retrieve` does and sends back the 1-bit result as
/// PNG, so clients can check their rasterization.
async fn echo_sketch(req: Request) -> Result<Response, ApiError> {
    let png = match multipart_fields(req).await? {
        Err(body) => body.to_vec(),
        Ok(fields) => fields
            .get("sketch")
            .ok_or_else(|| ApiError::bad_request("expected a `sketch` part"))?
            .to_vec(),
    };
    let sketch = SketchImage::from_png(&png)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], Body::from(sketch.to_png())).into_response())
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/model", post(upload_model))
        .route("/sessions/{id}/render", get(render))
        .route("/sessions/{id}/segment", post(segment))
        .route("/sessions/{id}/retrieve", post(retrieve))
        .route("/sessions/{id}/preview", post(preview))
        .route("/sessions/{id}/commit", post(commit))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/export", get(export))
        .route("/debug/echo-sketch", post(echo_sketch))
        .layer(axum::extract::DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves until ctrl-c, then writes session snapshots when a snapshot directory is set.
pub async fn serve(state: SharedState) -> std::io::Result<()> {
    let addr = format!("{}:{}", state.config.bind, state.config.port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Some(dir) = &state.config.snapshot_dir {
        let n = state.snapshot(dir).await?;
        log::info!("wrote {n} session snapshot(s) to {}", dir.display());
    }
    Ok(())
}
