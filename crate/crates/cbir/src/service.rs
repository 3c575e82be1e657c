//! HTTP API over an installed feature index.
//!
//! Queries run against an immutable snapshot; a build swaps in a new one
//! atomically once it finishes. See `docs/api.md` for the wire format.

use std::collections::BTreeMap;
use std::future::Future;
use std::path::{Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use cbir_core::index::IndexOptions;
use cbir_core::{
    crop, retrieve_combined, ClassSpec, CostMode, CropRect, DistanceSpace, FeatureIndex, RasterImage, Technique,
    TechniqueSet,
};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::clock::WallClock;
use crate::corpus::{build_from_dir, CorpusError, FileFailure, Labeling, TechniqueTiming};
use crate::decode::{content_type, decode_image, thumbnail};
use crate::manifest::{default_queries, from_map};
use crate::report::{run_evaluation, EvalMode, EvalSettings, Report, ReportError};
use crate::save_index;

pub const API_VERSION: &str = "1";
pub const DEFAULT_THUMBNAIL_SIZE: u32 = 256;
const BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Where a freshly built index is saved, if anywhere.
    pub index_path: Option<PathBuf>,
    /// Base for relative corpus directories in build requests.
    pub corpus_root: Option<PathBuf>,
    pub thumbnail_size: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            index_path: None,
            corpus_root: None,
            thumbnail_size: DEFAULT_THUMBNAIL_SIZE,
        }
    }
}

struct Shared {
    index: RwLock<Option<Arc<FeatureIndex>>>,
    building: AtomicBool,
    config: ServiceConfig,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(index: Option<FeatureIndex>, config: ServiceConfig) -> Self {
        Self(Arc::new(Shared {
            index: RwLock::new(index.map(Arc::new)),
            building: AtomicBool::new(false),
            config,
        }))
    }

    /// The currently installed index.
    pub fn snapshot(&self) -> Option<Arc<FeatureIndex>> {
        self.0.index.read().expect("index lock").clone()
    }

    fn install(&self, ix: FeatureIndex) {
        *self.0.index.write().expect("index lock") = Some(Arc::new(ix));
    }

    fn require_index(&self) -> Result<Arc<FeatureIndex>, ApiError> {
        self.snapshot()
            .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no index installed"))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown image id {id:?}"))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/techniques", get(techniques))
        .route("/api/index/status", get(status))
        .route("/api/index/build", post(build))
        .route("/api/query", post(query))
        .route("/api/images", get(list_images))
        .route("/api/images/{*rest}", get(image))
        .route("/api/evaluate", post(evaluate))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves `router(state)` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
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
        _ = ctrl_c => {},
        _ = term => {},
    }
    log::info!("shutting down");
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn encode_id(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~' | b'/') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn image_url(id: &str) -> String {
    format!("/api/images/{}", encode_id(id))
}

fn thumbnail_url(id: &str) -> String {
    format!("/api/images/{}/thumbnail", encode_id(id))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TechniqueInfo {
    pub name: Technique,
    pub short_name: String,
    pub title: String,
    pub dim: usize,
    /// Calibrated threshold of the installed index, if any.
    pub default_threshold: Option<f64>,
}

async fn techniques(State(state): State<AppState>) -> Json<Vec<TechniqueInfo>> {
    let ix = state.snapshot();
    Json(
        Technique::ALL
            .into_iter()
            .map(|t| TechniqueInfo {
                name: t,
                short_name: t.short_name().into(),
                title: t.title().into(),
                dim: t.dim(),
                default_threshold: ix.as_ref().map(|ix| ix.thresholds().get(t)),
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexState {
    Idle,
    Building,
    Ready,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusResponse {
    pub state: IndexState,
    pub record_count: usize,
    pub labeled: bool,
    pub space: Option<DistanceSpace>,
    pub api_version: String,
}

async fn status(State(state): State<AppState>) -> Json<StatusResponse> {
    let ix = state.snapshot();
    let building = state.0.building.load(Ordering::SeqCst);
    let st = match (&ix, building) {
        (_, true) => IndexState::Building,
        (Some(_), false) => IndexState::Ready,
        (None, false) => IndexState::Idle,
    };
    Json(StatusResponse {
        state: st,
        record_count: ix.as_ref().map_or(0, |ix| ix.len()),
        labeled: ix.as_ref().is_some_and(|ix| ix.is_labeled()),
        space: ix.as_ref().map(|ix| ix.space()),
        api_version: API_VERSION.into(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildRequest {
    pub corpus_dir: PathBuf,
    #[serde(default)]
    pub labeling: Labeling,
    #[serde(default)]
    pub space: Option<DistanceSpace>,
    #[serde(default)]
    pub percentile: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BuildSummary {
    pub record_count: usize,
    pub failures: Vec<FileFailure>,
    pub timings: Vec<TechniqueTiming>,
    pub total_seconds: f64,
    pub thresholds: BTreeMap<Technique, f64>,
    pub saved_to: Option<PathBuf>,
}

struct BuildGuard<'a>(&'a AtomicBool);

impl Drop for BuildGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

fn run_build(state: &AppState, req: BuildRequest) -> Result<BuildSummary, ApiError> {
    let cfg = &state.0.config;
    let dir = match &cfg.corpus_root {
        Some(root) if req.corpus_dir.is_relative() => root.join(&req.corpus_dir),
        _ => req.corpus_dir.clone(),
    };
    let mut options = IndexOptions::default();
    if let Some(space) = req.space {
        options.space = space;
    }
    if let Some(p) = req.percentile {
        if !(0.0..=100.0).contains(&p) {
            return Err(ApiError::bad_request("percentile must be within 0..=100"));
        }
        options.percentile = p;
    }
    let out = build_from_dir(&dir, req.labeling, &options).map_err(|e| match e {
        CorpusError::Index(_) => ApiError::internal(e.to_string()),
        _ => ApiError::bad_request(e.to_string()),
    })?;
    let saved_to = match &cfg.index_path {
        Some(path) => {
            save_index(&out.index, path)
                .map_err(|e| ApiError::internal(format!("cannot save index to {}: {e}", path.display())))?;
            Some(path.clone())
        }
        None => None,
    };
    let summary = BuildSummary {
        record_count: out.index.len(),
        failures: out.failures,
        timings: out.timings,
        total_seconds: out.total_seconds,
        thresholds: threshold_map(out.index.thresholds().values()),
        saved_to,
    };
    state.install(out.index);
    Ok(summary)
}

async fn build(
    State(state): State<AppState>,
    body: Result<Json<BuildRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<BuildSummary>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if state
        .0
        .building
        .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
        .is_err()
    {
        return Err(ApiError::new(StatusCode::CONFLICT, "a build is already in progress"));
    }
    let st = state.clone();
    blocking(move || {
        let _guard = BuildGuard(&st.0.building);
        run_build(&st, req)
    })
    .await
    .map(Json)
}

fn threshold_map(values: [f64; 6]) -> BTreeMap<Technique, f64> {
    Technique::ALL.into_iter().zip(values).collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    /// Id of an indexed image to use as the query.
    #[serde(default)]
    pub image_id: Option<String>,
    /// Encoded image bytes, standard base64.
    #[serde(default)]
    pub image_base64: Option<String>,
    #[serde(default)]
    pub crop: Option<CropRect>,
    /// Technique names; all six when absent.
    #[serde(default)]
    pub techniques: Option<Vec<String>>,
    /// Per-technique threshold overrides keyed by technique name.
    #[serde(default)]
    pub thresholds: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryHit {
    pub id: String,
    pub distance: f64,
    pub class_label: Option<String>,
    pub thumbnail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub hits: Vec<QueryHit>,
    pub elapsed: f64,
    pub techniques: TechniqueSet,
    pub thresholds: BTreeMap<Technique, f64>,
}

enum QuerySource {
    Bytes(Vec<u8>),
    Indexed(String),
}

fn parse_techniques(names: Option<&[String]>) -> Result<TechniqueSet, ApiError> {
    let Some(names) = names else {
        return Ok(TechniqueSet::ALL);
    };
    let ts = names
        .iter()
        .map(|n| n.parse::<Technique>())
        .collect::<Result<TechniqueSet, _>>()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    if ts.is_empty() {
        return Err(ApiError::bad_request("technique set must not be empty"));
    }
    Ok(ts)
}

fn load_record_image(ix: &FeatureIndex, id: &str) -> Result<RasterImage, ApiError> {
    let record = ix.record(id).ok_or_else(|| ApiError::not_found(id))?;
    let bytes =
        std::fs::read(&record.path).map_err(|e| ApiError::internal(format!("cannot read {}: {e}", record.path)))?;
    decode_image(&bytes).map_err(|e| ApiError::internal(format!("cannot decode {}: {e}", record.path)))
}

fn run_query(ix: &FeatureIndex, req: &QueryRequest, source: QuerySource) -> Result<QueryResponse, ApiError> {
    let techniques = parse_techniques(req.techniques.as_deref())?;
    let mut cfg = *ix.thresholds();
    for (name, &value) in req.thresholds.iter().flatten() {
        let t = name
            .parse::<Technique>()
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        cfg.set(t, value).map_err(|e| ApiError::bad_request(e.to_string()))?;
    }
    let full = match source {
        QuerySource::Bytes(bytes) => {
            decode_image(&bytes).map_err(|e| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, e.to_string()))?
        }
        QuerySource::Indexed(id) => load_record_image(ix, &id)?,
    };
    let img = match req.crop {
        Some(rect) => crop(&full, rect).map_err(|e| ApiError::bad_request(e.to_string()))?,
        None => full,
    };
    let result = retrieve_combined(&img, ix, techniques, &cfg, &WallClock::new())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let limit = req.limit.unwrap_or(usize::MAX);
    let hits = result
        .hits
        .into_iter()
        .take(limit)
        .map(|h| {
            let class_label = ix.record(&h.id).and_then(|r| r.class_label.clone());
            QueryHit {
                thumbnail: thumbnail_url(&h.id),
                id: h.id,
                distance: h.distance,
                class_label,
            }
        })
        .collect();
    Ok(QueryResponse {
        hits,
        elapsed: result.elapsed,
        techniques,
        thresholds: techniques.iter().map(|t| (t, cfg.get(t))).collect(),
    })
}

fn source_of(req: &QueryRequest, upload: Option<Vec<u8>>) -> Result<QuerySource, ApiError> {
    let inline = req
        .image_base64
        .as_deref()
        .map(|s| {
            base64::engine::general_purpose::STANDARD
                .decode(s.trim())
                .map_err(|e| ApiError::bad_request(format!("image_base64: {e}")))
        })
        .transpose()?;
    let mut given = [upload, inline].into_iter().flatten();
    let bytes = given.next();
    if given.next().is_some() {
        return Err(ApiError::bad_request("more than one image supplied"));
    }
    match (bytes, &req.image_id) {
        (Some(b), None) => Ok(QuerySource::Bytes(b)),
        (None, Some(id)) => Ok(QuerySource::Indexed(id.clone())),
        (None, None) => Err(ApiError::bad_request("request names no image")),
        (Some(_), Some(_)) => Err(ApiError::bad_request("give either image bytes or image_id, not both")),
    }
}

async fn read_multipart(mut mp: Multipart) -> Result<(QueryRequest, Option<Vec<u8>>), ApiError> {
    let mut req = QueryRequest::default();
    let mut upload = None;
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_owned();
        let data: Bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        match name.as_str() {
            "image" => upload = Some(data.to_vec()),
            "request" => {
                req =
                    serde_json::from_slice(&data).map_err(|e| ApiError::bad_request(format!("request field: {e}")))?;
            }
            other => return Err(ApiError::bad_request(format!("unexpected form field {other:?}"))),
        }
    }
    Ok((req, upload))
}

async fn query(State(state): State<AppState>, request: Request) -> Result<Json<QueryResponse>, ApiError> {
    let is_multipart = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let (req, upload) = if is_multipart {
        let mp = Multipart::from_request(request, &())
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        read_multipart(mp).await?
    } else {
        let Json(req) = Json::<QueryRequest>::from_request(request, &())
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        (req, None)
    };
    let source = source_of(&req, upload)?;
    let ix = state.require_index()?;
    blocking(move || run_query(&ix, &req, source)).await.map(Json)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub class_label: Option<String>,
    pub url: String,
    pub thumbnail: String,
}

async fn list_images(State(state): State<AppState>) -> Json<Vec<ImageEntry>> {
    let entries = state
        .snapshot()
        .map(|ix| {
            ix.records()
                .iter()
                .map(|r| ImageEntry {
                    id: r.id.clone(),
                    class_label: r.class_label.clone(),
                    url: image_url(&r.id),
                    thumbnail: thumbnail_url(&r.id),
                })
                .collect()
        })
        .unwrap_or_default();
    Json(entries)
}

fn read_original(path: &str) -> Result<Vec<u8>, ApiError> {
    std::fs::read(FsPath::new(path)).map_err(|e| ApiError::internal(format!("cannot read {path}: {e}")))
}

// Ids may contain `/`, so the tail is matched as a whole: an exact id wins,
// otherwise a `/thumbnail` suffix selects the thumbnail of the prefix.
async fn image(State(state): State<AppState>, Path(rest): Path<String>) -> Result<Response, ApiError> {
    let ix = state.snapshot().ok_or_else(|| ApiError::not_found(&rest))?;
    if let Some(record) = ix.record(&rest) {
        let bytes = read_original(&record.path)?;
        return Ok(([(header::CONTENT_TYPE, content_type(&record.path))], bytes).into_response());
    }
    let record = rest
        .strip_suffix("/thumbnail")
        .and_then(|id| ix.record(id))
        .ok_or_else(|| ApiError::not_found(&rest))?;
    let path = record.path.clone();
    let size = state.0.config.thumbnail_size;
    let small = blocking(move || {
        let bytes = read_original(&path)?;
        thumbnail(&bytes, size).map_err(|e| ApiError::internal(e.to_string()))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/jpeg")], small).into_response())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluateMode {
    Techniques,
    Each,
    #[default]
    Combined,
    Optimize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRequest {
    #[serde(default)]
    pub mode: EvaluateMode,
    /// Required for the `techniques` mode.
    #[serde(default)]
    pub techniques: Option<Vec<String>>,
    /// Class label to query image id; first member per class when absent.
    #[serde(default)]
    pub queries: Option<BTreeMap<String, String>>,
    #[serde(default)]
    pub deterministic_cost: bool,
}

pub fn evaluate_request(ix: &FeatureIndex, req: &EvaluateRequest) -> Result<Report, ApiError> {
    if !ix.is_labeled() {
        return Err(ApiError::new(StatusCode::CONFLICT, "index has no class labels"));
    }
    let mode = match req.mode {
        EvaluateMode::Techniques => {
            let names = req
                .techniques
                .as_deref()
                .ok_or_else(|| ApiError::bad_request("techniques mode needs a technique list"))?;
            EvalMode::Techniques(parse_techniques(Some(names))?)
        }
        EvaluateMode::Each => EvalMode::Each,
        EvaluateMode::Combined => EvalMode::Combined,
        EvaluateMode::Optimize => EvalMode::Optimize,
    };
    let queries = match &req.queries {
        Some(map) => from_map(map.clone()),
        None => {
            let classes = ClassSpec::from_index(ix).map_err(|e| ApiError::bad_request(e.to_string()))?;
            default_queries(&classes)
        }
    };
    let settings = EvalSettings {
        cost: if req.deterministic_cost {
            CostMode::ScanCount
        } else {
            CostMode::WallClock
        },
        ..EvalSettings::default()
    };
    run_evaluation(ix, &queries, mode, &settings).map_err(|e| match e {
        ReportError::Empty => ApiError::bad_request(e.to_string()),
        ReportError::Evaluation(inner) => ApiError::bad_request(inner.to_string()),
    })
}

async fn evaluate(
    State(state): State<AppState>,
    body: Result<Json<EvaluateRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<Report>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let ix = state.require_index()?;
    blocking(move || evaluate_request(&ix, &req)).await.map(Json)
}
