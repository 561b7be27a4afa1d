//! HTTP front end for trained colorizers.
//!
//! Routes:
//!
//! * `GET /health`: 200 once every checkpoint is loaded, 503 before.
//! * `GET /tags`: color tags grouped by region, attribute tags, and the
//!   vocabulary hash.
//! * `POST /colorize`: JSON (`image` as base64 PNG) or multipart (`image`
//!   file part plus text parts). Responds with base64 PNGs.
//!
//! Every error response has the shape `{"error": {"code", "message"}}`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::{to_bytes, Body};
use axum::extract::{FromRequest, Multipart, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use tagpaint_core::imaging::GrayImage;
use tagpaint_core::inference::Colorizer;
use tagpaint_core::tagspace::Region;
use tagpaint_core::TagVocabulary;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// `(variant name, checkpoint dir)`. A `None` name uses the block kind.
    pub checkpoints: Vec<(Option<String>, PathBuf)>,
    /// Largest accepted width or height of an uploaded image, in pixels.
    pub max_image_dim: u32,
    /// Largest accepted request body, in bytes.
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            max_image_dim: 1024,
            max_body_bytes: 8 << 20,
        }
    }
}

pub const DEFAULT_VARIANT: &str = "secat";

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("no checkpoints configured")]
    NoCheckpoints,
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        source: tagpaint_core::Error,
    },
    #[error("variant `{0}` given twice")]
    DuplicateVariant(String),
    #[error("variant `{variant}` uses vocabulary {found}, others use {expected}")]
    VocabMismatch {
        variant: String,
        expected: String,
        found: String,
    },
}

/// Loaded, immutable models.
#[derive(Debug)]
pub struct Models {
    variants: BTreeMap<String, Arc<Colorizer>>,
    default: String,
    vocab: TagVocabulary,
}

impl Models {
    pub fn new(named: Vec<(Option<String>, Colorizer)>) -> Result<Self, LoadError> {
        let mut variants = BTreeMap::new();
        let mut vocab: Option<TagVocabulary> = None;
        for (name, c) in named {
            let name = name.unwrap_or_else(|| c.block_kind().name().to_string());
            if let Some(v) = &vocab {
                if v.hash() != c.vocab().hash() {
                    return Err(LoadError::VocabMismatch {
                        variant: name,
                        expected: v.hash(),
                        found: c.vocab().hash(),
                    });
                }
            } else {
                vocab = Some(c.vocab().clone());
            }
            if variants.insert(name.clone(), Arc::new(c)).is_some() {
                return Err(LoadError::DuplicateVariant(name));
            }
        }
        let vocab = vocab.ok_or(LoadError::NoCheckpoints)?;
        let default = if variants.contains_key(DEFAULT_VARIANT) {
            DEFAULT_VARIANT.to_string()
        } else {
            variants.keys().next().unwrap().clone()
        };
        Ok(Self {
            variants,
            default,
            vocab,
        })
    }

    pub fn load(cfg: &ServiceConfig) -> Result<Self, LoadError> {
        let mut named = Vec::new();
        for (name, path) in &cfg.checkpoints {
            let c = Colorizer::load(path).map_err(|source| LoadError::Checkpoint {
                path: path.clone(),
                source,
            })?;
            named.push((name.clone(), c));
        }
        Self::new(named)
    }

    pub fn default_variant(&self) -> &str {
        &self.default
    }
}

#[derive(Debug)]
enum Lifecycle {
    Loading,
    Ready(Arc<Models>),
    Failed(String),
}

/// Shared state behind the router.
#[derive(Debug)]
pub struct AppState {
    lifecycle: RwLock<Lifecycle>,
    started: Instant,
    max_image_dim: u32,
    max_body_bytes: usize,
}

impl AppState {
    pub fn loading(cfg: &ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            lifecycle: RwLock::new(Lifecycle::Loading),
            started: Instant::now(),
            max_image_dim: cfg.max_image_dim,
            max_body_bytes: cfg.max_body_bytes,
        })
    }

    pub fn set_ready(&self, models: Models) {
        *self.lifecycle.write().unwrap() = Lifecycle::Ready(Arc::new(models));
    }

    pub fn set_failed(&self, msg: String) {
        *self.lifecycle.write().unwrap() = Lifecycle::Failed(msg);
    }

    fn models(&self) -> Result<Arc<Models>, ApiError> {
        match &*self.lifecycle.read().unwrap() {
            Lifecycle::Ready(m) => Ok(m.clone()),
            Lifecycle::Loading => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "loading", "model is still loading")),
            Lifecycle::Failed(e) => Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "load_failed",
                format!("model failed to load: {e}"),
            )),
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    code: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    tag: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                tag: None,
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn too_large(message: impl Into<String>) -> Self {
        Self::new(StatusCode::PAYLOAD_TOO_LARGE, "image_too_large", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

impl From<tagpaint_core::Error> for ApiError {
    fn from(e: tagpaint_core::Error) -> Self {
        match e {
            tagpaint_core::Error::UnknownTag(t) => {
                let mut err = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_tag", format!("unknown tag `{t}`"));
                err.body.tag = Some(t);
                err
            }
            tagpaint_core::Error::InvalidParam(m) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", m),
            other => Self::internal(other.to_string()),
        }
    }
}

#[derive(Debug, Serialize, PartialEq, Eq)]
pub struct TagsDoc {
    pub cvt: BTreeMap<String, Vec<String>>,
    pub cit: Vec<String>,
    pub vocab_hash: String,
}

fn tags_doc(v: &TagVocabulary) -> TagsDoc {
    let mut cvt: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for t in v.cvt_tags() {
        cvt.entry(t.region.name().to_string()).or_default().push(t.name.clone());
    }
    for r in [Region::Hair, Region::Eyes, Region::Garment] {
        cvt.entry(r.name().to_string()).or_default();
    }
    TagsDoc {
        cvt,
        cit: v.cit_names().to_vec(),
        vocab_hash: v.hash(),
    }
}

async fn tags(State(st): State<Arc<AppState>>) -> Result<Json<TagsDoc>, ApiError> {
    Ok(Json(tags_doc(&st.models()?.vocab)))
}

async fn health(State(st): State<Arc<AppState>>) -> Response {
    let uptime = st.started.elapsed().as_secs_f64();
    match st.models() {
        Ok(m) => {
            let ids: BTreeMap<&str, &str> = m.variants.iter().map(|(k, c)| (k.as_str(), c.id())).collect();
            Json(serde_json::json!({
                "status": "ready",
                "checkpoint_id": m.variants[&m.default].id(),
                "default_variant": m.default,
                "variants": ids,
                "vocab_hash": m.vocab.hash(),
                "uptime_seconds": uptime,
            }))
            .into_response()
        }
        Err(e) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(serde_json::json!({
                "status": if e.body.code == "loading" { "loading" } else { "failed" },
                "error": e.body,
                "uptime_seconds": uptime,
            })),
        )
            .into_response(),
    }
}

/// JSON form of a colorize request.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorizeRequest {
    /// Base64-encoded PNG.
    pub image: String,
    pub tags: Vec<String>,
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub real_sketch: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelInfo {
    pub checkpoint_id: String,
    pub variant: String,
    pub block_kind: String,
    pub inference_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ColorizeResponse {
    /// Base64-encoded PNG at the model's image size.
    pub image: String,
    pub guide_image: Option<String>,
    pub model_info: ModelInfo,
}

struct Parsed {
    png: Vec<u8>,
    tags: Vec<String>,
    variant: Option<String>,
    real_sketch: bool,
}

fn is_multipart(req: &Request) -> bool {
    req.headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"))
}

fn split_tags(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from)
}

fn parse_bool(field: &str, s: &str) -> Result<bool, ApiError> {
    match s.trim() {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" | "" => Ok(false),
        other => Err(ApiError::bad_request(format!("field `{field}`: expected a boolean, got `{other}`"))),
    }
}

async fn parse_multipart(req: Request, limit: usize) -> Result<Parsed, ApiError> {
    let mut mp = Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mut png = None;
    let mut tags = Vec::new();
    let mut variant = None;
    let mut real_sketch = false;
    let mut total = 0usize;
    while let Some(field) = mp.next_field().await.map_err(|e| ApiError::bad_request(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| {
            if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
                ApiError::too_large(e.body_text())
            } else {
                ApiError::bad_request(e.body_text())
            }
        })?;
        total += bytes.len();
        if total > limit {
            return Err(ApiError::too_large(format!("request body exceeds {limit} bytes")));
        }
        let text = || String::from_utf8(bytes.to_vec()).map_err(|_| ApiError::bad_request(format!("field `{name}` is not UTF-8")));
        match name.as_str() {
            "image" => png = Some(bytes.to_vec()),
            "tags" => tags.extend(split_tags(&text()?).collect::<Vec<_>>()),
            "variant" => variant = Some(text()?.trim().to_string()).filter(|v| !v.is_empty()),
            "real_sketch" => real_sketch = parse_bool("real_sketch", &text()?)?,
            other => return Err(ApiError::bad_request(format!("unknown field `{other}`"))),
        }
    }
    Ok(Parsed {
        png: png.ok_or_else(|| ApiError::bad_request("missing field `image`"))?,
        tags,
        variant,
        real_sketch,
    })
}

async fn parse_json(req: Request, limit: usize) -> Result<Parsed, ApiError> {
    let bytes = to_bytes(req.into_body(), limit)
        .await
        .map_err(|_| ApiError::too_large(format!("request body exceeds {limit} bytes")))?;
    let r: ColorizeRequest =
        serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))?;
    let png = B64
        .decode(r.image.trim())
        .map_err(|e| ApiError::bad_request(format!("field `image`: invalid base64: {e}")))?;
    Ok(Parsed {
        png,
        tags: r.tags,
        variant: r.variant,
        real_sketch: r.real_sketch,
    })
}

/// Reads only the header to reject oversized images before decoding.
fn decode_image(png: &[u8], max_dim: u32) -> Result<GrayImage, ApiError> {
    let invalid = |e: image::ImageError| ApiError::new(StatusCode::BAD_REQUEST, "invalid_image", format!("cannot decode image: {e}"));
    let reader = image::ImageReader::new(std::io::Cursor::new(png))
        .with_guessed_format()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_image", e.to_string()))?;
    let (w, h) = reader.into_dimensions().map_err(invalid)?;
    if w > max_dim || h > max_dim {
        return Err(ApiError::too_large(format!("image is {w}x{h}; the limit is {max_dim}x{max_dim}")));
    }
    if w == 0 || h == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_image", "image has no pixels"));
    }
    Ok(GrayImage::from_dynamic(&image::load_from_memory(png).map_err(invalid)?))
}

async fn colorize(State(st): State<Arc<AppState>>, req: Request) -> Result<Json<ColorizeResponse>, ApiError> {
    let models = st.models()?;
    let parsed = if is_multipart(&req) {
        parse_multipart(req, st.max_body_bytes).await?
    } else {
        parse_json(req, st.max_body_bytes).await?
    };
    let variant = parsed.variant.unwrap_or_else(|| models.default.clone());
    let colorizer = models.variants.get(&variant).cloned().ok_or_else(|| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "unknown_variant",
            format!(
                "unknown variant `{variant}`; available: {}",
                models.variants.keys().cloned().collect::<Vec<_>>().join(", ")
            ),
        )
    })?;
    let gray = decode_image(&parsed.png, st.max_image_dim)?;
    let tags = parsed.tags;
    let real_sketch = parsed.real_sketch;
    let c = colorizer.clone();
    let (out, ms) = tokio::task::spawn_blocking(move || {
        let t = Instant::now();
        let out = c.colorize(&gray, &tags, real_sketch);
        (out, t.elapsed().as_secs_f64() * 1e3)
    })
    .await
    .map_err(|e| ApiError::internal(format!("inference task failed: {e}")))?;
    let out = out?;
    tracing::info!(variant = %variant, inference_ms = ms, "colorized");
    let png = |img: &tagpaint_core::imaging::ColorImage| -> Result<String, ApiError> { Ok(B64.encode(img.png_bytes()?)) };
    Ok(Json(ColorizeResponse {
        image: png(&out.image)?,
        guide_image: Some(png(&out.guide)?),
        model_info: ModelInfo {
            checkpoint_id: colorizer.id().to_string(),
            variant,
            block_kind: colorizer.block_kind().name().to_string(),
            inference_ms: ms,
        },
    }))
}

async fn access_log(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let t = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        target: "tagpaint_service::access",
        %method,
        %path,
        status = resp.status().as_u16(),
        ms = t.elapsed().as_secs_f64() * 1e3,
    );
    resp
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(state: Arc<AppState>) -> Router {
    // Body size is enforced by the handlers so the 413 carries an error code.
    Router::new()
        .route("/health", get(health))
        .route("/tags", get(tags))
        .route("/colorize", post(colorize))
        .fallback(not_found)
        .layer(axum::extract::DefaultBodyLimit::disable())
        .layer(middleware::from_fn(access_log))
        .with_state(state)
}

/// Binds, starts answering immediately (503 until loaded), and loads the
/// checkpoints in the background.
pub async fn serve(addr: SocketAddr, cfg: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::loading(&cfg);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let loader = state.clone();
    tokio::task::spawn_blocking(move || match Models::load(&cfg) {
        Ok(m) => {
            tracing::info!(variants = ?m.variants.keys().collect::<Vec<_>>(), "models ready");
            loader.set_ready(m);
        }
        Err(e) => {
            tracing::error!(error = %e, "model load failed");
            loader.set_failed(e.to_string());
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Builds a request body for `POST /colorize` in JSON form.
pub fn json_request_body(png: &[u8], tags: &[&str], variant: Option<&str>, real_sketch: bool) -> Body {
    let req = ColorizeRequest {
        image: B64.encode(png),
        tags: tags.iter().map(|s| s.to_string()).collect(),
        variant: variant.map(String::from),
        real_sketch,
    };
    Body::from(serde_json::to_vec(&req).expect("request serializes"))
}

/// Decodes a base64 PNG field of a [`ColorizeResponse`].
pub fn decode_png_field(b64: &str) -> Result<image::DynamicImage, String> {
    let bytes = B64.decode(b64).map_err(|e| e.to_string())?;
    image::load_from_memory(&bytes).map_err(|e| e.to_string())
}
