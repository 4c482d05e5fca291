//! HTTP service behind the review UI.
//!
//! Reads are served from an immutable graph snapshot behind an `Arc`, so a
//! reader never observes a half-applied edit. Mutations are serialized by a
//! single writer lock: the writer clones the current snapshot, applies the
//! edit, persists the graph document (write to a temporary file, then
//! rename) and the journal line, and only then publishes the new snapshot.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{Mutex, Semaphore};

use super::manifest::CorpusManifest;
use super::pairwise::{pair_seed, MethodKind, PairwiseConfig, ScanData};
use super::PipelineError;
use crate::diegraph::{
    cluster, pair_key, DiegraphError, Edit, EditAction, ExportFormat, JournalEntry, PairKey,
    SimilarityGraph,
};
use crate::geom3d::{load_point_cloud, voxel_downsample, PointCloud};
use crate::register::{register_prepared, DescriptorSource, RegistrationParams};
use crate::simscore::PairScore;

/// Clustering threshold used when a request does not give one.
pub const DEFAULT_TAU: f64 = 0.95;
/// Upper bound on points returned for one cloud.
pub const MAX_RENDER_POINTS: usize = 20_000;
const DEFAULT_RENDER_VOXEL: f64 = 0.1;

/// Journal sidecar of a graph document: `<graph>.journal.jsonl`.
pub fn journal_path(graph_path: &Path) -> PathBuf {
    let mut name = graph_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".journal.jsonl");
    graph_path.with_file_name(name)
}

/// Writes the graph document so that readers see either the old or the new
/// file, never a partial one.
pub fn persist_graph(graph: &SimilarityGraph, path: &Path) -> Result<(), PipelineError> {
    let text = graph.to_json()?;
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a graph document and its journal sidecar, if present.
pub fn load_graph(path: &Path) -> Result<SimilarityGraph, PipelineError> {
    let mut g = SimilarityGraph::from_json(&std::fs::read_to_string(path)?)?;
    let jp = journal_path(path);
    if jp.exists() {
        let journal = SimilarityGraph::read_journal(std::io::BufReader::new(std::fs::File::open(jp)?))?;
        g.attach_journal(journal);
    }
    Ok(g)
}

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Where edits are persisted; `None` keeps them in memory.
    pub graph_path: Option<PathBuf>,
    /// Bearer token required on mutations; `None` disables the check.
    pub token: Option<String>,
    /// Scan locations, needed by the point and preview endpoints.
    pub manifest: Option<CorpusManifest>,
    /// Precomputed pair details.
    pub scores: Vec<PairScore>,
    /// Registration settings for previews.
    pub config: PairwiseConfig,
}

pub struct ServiceState {
    graph: RwLock<Arc<SimilarityGraph>>,
    writer: Mutex<()>,
    graph_path: Option<PathBuf>,
    token: Option<String>,
    manifest: Option<CorpusManifest>,
    scores: BTreeMap<PairKey, PairScore>,
    config: PairwiseConfig,
    preview: Semaphore,
}

impl ServiceState {
    pub fn new(graph: SimilarityGraph, options: ServiceOptions) -> Self {
        Self {
            graph: RwLock::new(Arc::new(graph)),
            writer: Mutex::new(()),
            graph_path: options.graph_path,
            token: options.token,
            manifest: options.manifest,
            scores: options
                .scores
                .into_iter()
                .map(|s| (pair_key(&s.id_a, &s.id_b), s))
                .collect(),
            config: options.config,
            preview: Semaphore::new(1),
        }
    }

    /// The current graph snapshot.
    pub fn snapshot(&self) -> Arc<SimilarityGraph> {
        self.graph.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn publish(&self, g: SimilarityGraph) {
        *self.graph.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(g);
    }
}

/// Error rendered as `{"error": {"code": .., "message": ..}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            extra: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut err = json!({"code": self.code, "message": self.message});
        if let (Some(Value::Object(extra)), Value::Object(map)) = (self.extra, &mut err) {
            map.extend(extra);
        }
        (self.status, Json(json!({ "error": err }))).into_response()
    }
}

impl From<DiegraphError> for ApiError {
    fn from(e: DiegraphError) -> Self {
        match e {
            DiegraphError::UnknownNode(_) => ApiError::not_found(e.to_string()),
            DiegraphError::SelfPair(_) | DiegraphError::InvalidProbability { .. } => ApiError::bad_request(e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        ApiError::internal(e.to_string())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(e.status(), "bad_request", e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/api/graph", get(get_graph))
        .route("/api/clusters", get(get_clusters))
        .route("/api/clusters/export", get(export))
        .route("/api/edits", post(post_edit))
        .route("/api/edits/{a}/{b}", delete(delete_edit))
        .route("/api/pairs/{a}/{b}", get(get_pair))
        .route("/api/pairs/{a}/{b}/preview", post(preview))
        .route("/api/scans/{id}/points", get(scan_points))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> Result<(), PipelineError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn check_auth(state: &ServiceState, headers: &HeaderMap) -> ApiResult<()> {
    let Some(token) = &state.token else {
        return Ok(());
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(token.as_str()) {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token"))
    }
}

fn parse_tau(tau: Option<f64>) -> ApiResult<f64> {
    let tau = tau.unwrap_or(DEFAULT_TAU);
    if (0.0..=1.0).contains(&tau) {
        Ok(tau)
    } else {
        Err(ApiError::bad_request(format!("tau must be in [0, 1], got {tau}")))
    }
}

async fn get_graph(State(state): State<Arc<ServiceState>>) -> ApiResult<Json<Value>> {
    Ok(Json(state.snapshot().to_json_value()?))
}

#[derive(Deserialize)]
struct TauQuery {
    tau: Option<f64>,
}

async fn get_clusters(
    State(state): State<Arc<ServiceState>>,
    query: Result<Query<TauQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(q) = query?;
    let tau = parse_tau(q.tau)?;
    let g = state.snapshot();
    let c = cluster(&g, tau);
    let clusters: Vec<Value> = c
        .clusters()
        .into_iter()
        .enumerate()
        .map(|(id, members)| json!({"id": id, "members": members}))
        .collect();
    Ok(Json(json!({"version": g.version(), "tau": tau, "clusters": clusters})))
}

#[derive(Deserialize)]
struct ExportQuery {
    tau: Option<f64>,
    format: Option<String>,
}

async fn export(
    State(state): State<Arc<ServiceState>>,
    query: Result<Query<ExportQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let tau = parse_tau(q.tau)?;
    let format: ExportFormat = q
        .format
        .as_deref()
        .unwrap_or("csv")
        .parse()
        .map_err(|e: DiegraphError| ApiError::bad_request(e.to_string()))?;
    let body = super::export_at(&state.snapshot(), tau, format)?;
    let content_type = match format {
        ExportFormat::Csv => "text/csv; charset=utf-8",
        ExportFormat::Json => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditRequest {
    pub a: String,
    pub b: String,
    pub edit: Edit,
    #[serde(default)]
    pub author: Option<String>,
    /// Rejects the edit with 409 unless the graph is at this version.
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Deserialize)]
struct VersionQuery {
    expected_version: Option<u64>,
    author: Option<String>,
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

async fn apply(
    state: &ServiceState,
    a: &str,
    b: &str,
    action: EditAction,
    author: Option<String>,
    expected_version: Option<u64>,
) -> ApiResult<Json<Value>> {
    let _writer = state.writer.lock().await;
    let current = state.snapshot();
    if let Some(v) = expected_version {
        if v != current.version() {
            let mut e = ApiError::new(
                StatusCode::CONFLICT,
                "version_conflict",
                format!("graph is at version {}, edit expected {v}", current.version()),
            );
            e.extra = Some(json!({"current_version": current.version()}));
            return Err(e);
        }
    }
    let mut next = (*current).clone();
    let before = next.version();
    let author = author.unwrap_or_else(|| "anonymous".to_string());
    let version = next.apply_edit(a, b, action, &author, now_secs())?;
    let changed = version != before;
    if changed {
        if let Some(path) = &state.graph_path {
            persist_graph(&next, path)?;
            append_journal(path, next.journal().last().expect("changed edit is journaled"))?;
        }
        state.publish(next);
    }
    Ok(Json(json!({"version": version, "changed": changed})))
}

fn append_journal(graph_path: &Path, entry: &JournalEntry) -> Result<(), PipelineError> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(journal_path(graph_path))?;
    let mut line = serde_json::to_vec(entry)?;
    line.push(b'\n');
    f.write_all(&line)?;
    f.sync_data()?;
    Ok(())
}

async fn post_edit(
    State(state): State<Arc<ServiceState>>,
    headers: HeaderMap,
    body: Result<Json<EditRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    check_auth(&state, &headers)?;
    let Json(req) = body?;
    apply(&state, &req.a, &req.b, req.edit.into(), req.author, req.expected_version).await
}

async fn delete_edit(
    State(state): State<Arc<ServiceState>>,
    headers: HeaderMap,
    UrlPath((a, b)): UrlPath<(String, String)>,
    query: Result<Query<VersionQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    check_auth(&state, &headers)?;
    let Query(q) = query?;
    apply(&state, &a, &b, EditAction::Clear, q.author, q.expected_version).await
}

async fn get_pair(
    State(state): State<Arc<ServiceState>>,
    UrlPath((a, b)): UrlPath<(String, String)>,
) -> ApiResult<Json<Value>> {
    let g = state.snapshot();
    for id in [&a, &b] {
        if !g.contains(id) {
            return Err(ApiError::not_found(format!("unknown scan {id:?}")));
        }
    }
    if a == b {
        return Err(ApiError::bad_request("a pair needs two distinct scans"));
    }
    let key = pair_key(&a, &b);
    let score = state.scores.get(&key);
    Ok(Json(json!({
        "a": key.0,
        "b": key.1,
        "version": g.version(),
        "probability": g.probability(&a, &b),
        "overlay": g.overlay_entry(&a, &b),
        "retained": g.is_retained(&a, &b, DEFAULT_TAU),
        "score": score.map(|s| json!({
            "probability": s.probability,
            "rmse": s.rmse,
            "transform": s.transform.to_row_major(),
            "histogram": s.histogram,
        })),
    })))
}

fn scan_cloud(state: &ServiceState, id: &str) -> ApiResult<PointCloud> {
    let manifest = state
        .manifest
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_IMPLEMENTED, "no_manifest", "service runs without a manifest"))?;
    let entry = manifest.get(id).ok_or_else(|| ApiError::not_found(format!("unknown scan {id:?}")))?;
    let mut cloud = load_point_cloud(manifest.scan_path(entry), state.config.method == MethodKind::Fpfh)
        .map_err(|e| ApiError::internal(format!("loading {id}: {e}")))?;
    cloud.set_id(id.to_string());
    Ok(cloud)
}

/// Downsamples with `voxel`, coarsening further until the cloud fits the
/// render budget. Returns the points and the voxel actually used.
fn render_points(cloud: &PointCloud, voxel: f64) -> ApiResult<(Vec<Point3<f64>>, f64)> {
    let mut voxel = voxel;
    loop {
        let d = voxel_downsample(cloud, voxel).map_err(|e| ApiError::bad_request(e.to_string()))?;
        if d.len() <= MAX_RENDER_POINTS {
            return Ok((d.points().to_vec(), voxel));
        }
        voxel *= 1.25;
    }
}

fn coords(points: &[Point3<f64>]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

#[derive(Deserialize)]
struct VoxelQuery {
    voxel: Option<f64>,
}

async fn scan_points(
    State(state): State<Arc<ServiceState>>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<VoxelQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(q) = query?;
    let voxel = q.voxel.unwrap_or(DEFAULT_RENDER_VOXEL);
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(ApiError::bad_request("voxel must be positive"));
    }
    let body = tokio::task::spawn_blocking(move || -> ApiResult<Value> {
        let cloud = scan_cloud(&state, &id)?;
        let (points, used) = render_points(&cloud, voxel)?;
        Ok(json!({"id": id, "voxel": used, "count": points.len(), "points": coords(&points)}))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(body))
}

async fn preview(
    State(state): State<Arc<ServiceState>>,
    UrlPath((a, b)): UrlPath<(String, String)>,
) -> ApiResult<Json<Value>> {
    let Ok(permit) = state.preview.try_acquire() else {
        return Err(ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            "preview_busy",
            "a preview registration is already running",
        ));
    };
    let st = state.clone();
    let body = tokio::task::spawn_blocking(move || -> ApiResult<Value> {
        if a == b {
            return Err(ApiError::bad_request("a pair needs two distinct scans"));
        }
        let (a, b) = pair_key(&a, &b);
        let (ca, cb) = (scan_cloud(&st, &a)?, scan_cloud(&st, &b)?);
        let descriptors = match st.config.method {
            MethodKind::IcpRand => DescriptorSource::None,
            MethodKind::Fpfh => DescriptorSource::Fpfh,
            MethodKind::External => {
                let manifest = st.manifest.as_ref().expect("scan_cloud checked the manifest");
                let path_of = |id: &str| {
                    manifest
                        .get(id)
                        .and_then(|e| e.descriptors.as_ref())
                        .map(|p| manifest.resolve(p))
                        .ok_or_else(|| ApiError::bad_request(format!("scan {id:?} has no descriptor file")))
                };
                return preview_with(&st, &ca, &cb, DescriptorSource::External(path_of(&a)?), DescriptorSource::External(path_of(&b)?));
            }
        };
        preview_with(&st, &ca, &cb, descriptors.clone(), descriptors)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    drop(permit);
    Ok(Json(body))
}

fn preview_with(
    state: &ServiceState,
    a: &PointCloud,
    b: &PointCloud,
    da: DescriptorSource,
    db: DescriptorSource,
) -> ApiResult<Value> {
    let params = &state.config.registration;
    let sa = ScanData::new(a, crate::evalmetrics::FaceCategory::Reverse, &da, params)?;
    let sb = ScanData::new(b, crate::evalmetrics::FaceCategory::Reverse, &db, params)?;
    let params = RegistrationParams {
        seed: pair_seed(params.seed, a.id(), b.id()),
        ..params.clone()
    };
    let reg = register_prepared(&sa.prepared, &sb.prepared, &params).map_err(|e| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "registration_failed", e.to_string())
    })?;
    let (src, _) = render_points(&a.transformed(&reg.transform), DEFAULT_RENDER_VOXEL)?;
    let (tgt, _) = render_points(b, DEFAULT_RENDER_VOXEL)?;
    Ok(json!({
        "a": a.id(),
        "b": b.id(),
        "transform": reg.transform.to_row_major(),
        "rmse": reg.rmse,
        "inliers": reg.inliers.len(),
        "source": coords(&src),
        "target": coords(&tgt),
    }))
}
