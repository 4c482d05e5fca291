//! C ABI for diematch.
//!
//! Every function returns a [`DmStatus`]; results are written through out
//! pointers. Objects are opaque handles released with the matching
//! `dm_*_free`, which accepts null. When a call fails, a message describing
//! the failure is kept per thread until the next failing call and can be
//! copied out with [`dm_last_error_message`]. Panics never cross the
//! boundary; they surface as [`DmStatus::Panic`].
//!
//! Enumerations are passed as `uint32_t` so that out-of-range values from C
//! are rejected instead of being undefined behaviour; [`DmMethod`],
//! [`DmEditAction`] and [`DmExportFormat`] name the accepted values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use diematch::diegraph::{EditAction, ExportFormat, SimilarityGraph};
use diematch::evalmetrics::{ari_labels, fmi_labels};
use diematch::geom3d::{load_point_cloud, voxel_downsample, PointCloud, RigidTransform};
use diematch::pipeline::{export_at, graph_from_scores, persist_graph};
use diematch::register::{register_pair, RegistrationMethod, RegistrationParams};
use diematch::simscore::{
    cloud_to_cloud, histogram, predict, read_model, read_scores_csv, LogisticModel, N_BINS, SOURCE_VOXEL,
    TARGET_VOXEL,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Registration = 5,
    Scoring = 6,
    Graph = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmMethod {
    IcpRand = 0,
    Fpfh = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmEditAction {
    ForcedLink = 0,
    ForcedCut = 1,
    Clear = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmExportFormat {
    Csv = 0,
    Json = 1,
}

/// Number of bins in a distance histogram.
pub const DM_HISTOGRAM_BINS: usize = 70;
const _: () = assert!(DM_HISTOGRAM_BINS == N_BINS);

pub struct DmPointCloud(PointCloud);
pub struct DmParams(RegistrationParams);
pub struct DmModel(LogisticModel);
pub struct DmGraph(SimilarityGraph);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(DmStatus, String);

impl Failure {
    fn new(status: DmStatus, message: impl std::fmt::Display) -> Self {
        Failure(status, message.to_string())
    }
}

type FfiResult = Result<(), Failure>;

fn run(f: impl FnOnce() -> FfiResult) -> DmStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(DmStatus::Panic, format!("panic: {msg}")))
    });
    match outcome {
        Ok(()) => DmStatus::Ok,
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(DmStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(DmStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    non_null(p, name)?;
    Ok(&*p)
}

unsafe fn handle_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    non_null(p, name)?;
    Ok(&mut *p)
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> FfiResult {
    non_null(out, "out")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put<T>(out: *mut T, value: T, name: &str) -> FfiResult {
    non_null(out, name)?;
    *out = value;
    Ok(())
}

/// Copies `s` plus a terminating NUL into `buf`. `out_len` (optional)
/// receives the length without the NUL; when `capacity` is too small nothing
/// is written to `buf` and `BufferTooSmall` is returned.
unsafe fn copy_out(s: &str, buf: *mut c_char, capacity: usize, out_len: *mut usize) -> FfiResult {
    if !out_len.is_null() {
        *out_len = s.len();
    }
    if capacity < s.len() + 1 {
        return Err(Failure::new(
            DmStatus::BufferTooSmall,
            format!("need {} bytes, buffer holds {capacity}", s.len() + 1),
        ));
    }
    non_null(buf, "buf")?;
    std::ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies this thread's last error message into `buf` (truncated to fit,
/// always NUL-terminated when `capacity > 0`). Returns the full message
/// length without the NUL.
///
/// # Safety
/// `buf` must be valid for `capacity` bytes or null with `capacity == 0`.
#[no_mangle]
pub unsafe extern "C" fn dm_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = e.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

// ---- point clouds ----

/// Loads a PLY file; the cloud id is the file stem.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_cloud_load_ply(path: *const c_char, require_normals: bool, out: *mut *mut DmPointCloud) -> DmStatus {
    run(|| {
        let path = text(path, "path")?;
        let c = load_point_cloud(path, require_normals).map_err(|e| Failure::new(DmStatus::Io, e))?;
        emit(out, DmPointCloud(c))
    })
}

/// Builds a cloud from `n` xyz triples; `normals` may be null.
///
/// # Safety
/// `points` (and `normals` when non-null) must hold `3 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn dm_cloud_from_arrays(
    id: *const c_char,
    points: *const f64,
    normals: *const f64,
    n: usize,
    out: *mut *mut DmPointCloud,
) -> DmStatus {
    run(|| {
        let id = text(id, "id")?;
        non_null(points, "points")?;
        let p = std::slice::from_raw_parts(points, 3 * n);
        let pts = p.chunks_exact(3).map(|c| [c[0], c[1], c[2]].into()).collect();
        let nrm = if normals.is_null() {
            Vec::new()
        } else {
            std::slice::from_raw_parts(normals, 3 * n)
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]].into())
                .collect()
        };
        let c = PointCloud::new(id, pts, nrm).map_err(|e| Failure::new(DmStatus::InvalidArgument, e))?;
        emit(out, DmPointCloud(c))
    })
}

/// # Safety
/// `cloud` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_cloud_len(cloud: *const DmPointCloud, out: *mut usize) -> DmStatus {
    run(|| put(out, handle(cloud, "cloud")?.0.len(), "out"))
}

/// Copies the points as xyz triples into `buf`, which must hold
/// `3 * capacity_points` doubles.
///
/// # Safety
/// `cloud` must be a live handle; `buf` valid for the stated capacity.
#[no_mangle]
pub unsafe extern "C" fn dm_cloud_points(cloud: *const DmPointCloud, buf: *mut f64, capacity_points: usize) -> DmStatus {
    run(|| {
        let c = &handle(cloud, "cloud")?.0;
        if capacity_points < c.len() {
            return Err(Failure::new(
                DmStatus::BufferTooSmall,
                format!("cloud has {} points, buffer holds {capacity_points}", c.len()),
            ));
        }
        non_null(buf, "buf")?;
        let out = std::slice::from_raw_parts_mut(buf, 3 * c.len());
        for (dst, p) in out.chunks_exact_mut(3).zip(c.points()) {
            dst.copy_from_slice(&[p.x, p.y, p.z]);
        }
        Ok(())
    })
}

/// Replaces `*cloud` by its voxel-grid downsampling.
///
/// # Safety
/// `cloud` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dm_cloud_downsample(cloud: *mut DmPointCloud, voxel: f64) -> DmStatus {
    run(|| {
        let c = handle_mut(cloud, "cloud")?;
        c.0 = voxel_downsample(&c.0, voxel).map_err(|e| Failure::new(DmStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dm_cloud_free(cloud: *mut DmPointCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

// ---- registration ----

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_params_default(out: *mut *mut DmParams) -> DmStatus {
    run(|| emit(out, DmParams(RegistrationParams::default())))
}

/// Parameters from a JSON object; missing fields keep their defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_params_from_json(json: *const c_char, out: *mut *mut DmParams) -> DmStatus {
    run(|| {
        let p: RegistrationParams =
            serde_json::from_str(text(json, "json")?).map_err(|e| Failure::new(DmStatus::Parse, e))?;
        p.validate().map_err(|e| Failure::new(DmStatus::InvalidArgument, e))?;
        emit(out, DmParams(p))
    })
}

/// # Safety
/// `params` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dm_params_set_seed(params: *mut DmParams, seed: u64) -> DmStatus {
    run(|| {
        handle_mut(params, "params")?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `params` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dm_params_free(params: *mut DmParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Registers `source` onto `target`. `params` may be null for defaults.
/// `out_transform` receives the row-major 4x4 matrix (16 doubles);
/// `out_rmse` and `out_inliers` are optional.
///
/// # Safety
/// Handles must be live; `out_transform` must hold 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn dm_register(
    source: *const DmPointCloud,
    target: *const DmPointCloud,
    method: u32,
    params: *const DmParams,
    out_transform: *mut f64,
    out_rmse: *mut f64,
    out_inliers: *mut usize,
) -> DmStatus {
    run(|| {
        let (src, tgt) = (&handle(source, "source")?.0, &handle(target, "target")?.0);
        let method = match method {
            m if m == DmMethod::IcpRand as u32 => RegistrationMethod::IcpRand,
            m if m == DmMethod::Fpfh as u32 => RegistrationMethod::Fpfh,
            m => return Err(Failure::new(DmStatus::InvalidArgument, format!("unknown method {m}"))),
        };
        let default = RegistrationParams::default();
        let params = if params.is_null() { &default } else { &(*params).0 };
        non_null(out_transform, "out_transform")?;
        let r = register_pair(src, tgt, &method, params).map_err(|e| Failure::new(DmStatus::Registration, e))?;
        std::slice::from_raw_parts_mut(out_transform, 16).copy_from_slice(&r.transform.to_row_major());
        if !out_rmse.is_null() {
            *out_rmse = r.rmse;
        }
        if !out_inliers.is_null() {
            *out_inliers = r.inliers.len();
        }
        Ok(())
    })
}

// ---- similarity ----

/// Loads a model file written by `diematch train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_model_load(path: *const c_char, out: *mut *mut DmModel) -> DmStatus {
    run(|| {
        let f = File::open(text(path, "path")?).map_err(|e| Failure::new(DmStatus::Io, e))?;
        let m = read_model(BufReader::new(f)).map_err(|e| Failure::new(DmStatus::Parse, e))?;
        emit(out, DmModel(m))
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dm_model_free(model: *mut DmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Same-die probability of two full-resolution scans aligned by
/// `transform` (row-major 4x4 mapping source onto target). Both are
/// downsampled to the scoring grids first. `out_histogram`, when non-null,
/// receives `DM_HISTOGRAM_BINS` values.
///
/// # Safety
/// Handles must be live; `transform` must hold 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn dm_score(
    source: *const DmPointCloud,
    target: *const DmPointCloud,
    transform: *const f64,
    model: *const DmModel,
    out_probability: *mut f64,
    out_histogram: *mut f64,
) -> DmStatus {
    run(|| {
        let (src, tgt) = (&handle(source, "source")?.0, &handle(target, "target")?.0);
        let model = &handle(model, "model")?.0;
        non_null(transform, "transform")?;
        let m: &[f64; 16] = std::slice::from_raw_parts(transform, 16).try_into().expect("16 values");
        let t = RigidTransform::from_row_major(m).map_err(|e| Failure::new(DmStatus::InvalidArgument, e))?;
        let scoring = |e: &dyn std::fmt::Display| Failure::new(DmStatus::Scoring, e);
        let s = voxel_downsample(src, SOURCE_VOXEL).map_err(|e| scoring(&e))?;
        let g = voxel_downsample(tgt, TARGET_VOXEL).map_err(|e| scoring(&e))?;
        let h = histogram(&cloud_to_cloud(&s, &g, &t).map_err(|e| scoring(&e))?);
        let p = predict(model, &h).map_err(|e| scoring(&e))?;
        put(out_probability, p, "out_probability")?;
        if !out_histogram.is_null() {
            std::slice::from_raw_parts_mut(out_histogram, N_BINS).copy_from_slice(&h.bins);
        }
        Ok(())
    })
}

// ---- similarity graph ----

fn graph_failure(e: impl std::fmt::Display) -> Failure {
    Failure::new(DmStatus::Graph, e)
}

/// Loads a graph document (with its journal sidecar when present).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_graph_load(path: *const c_char, out: *mut *mut DmGraph) -> DmStatus {
    run(|| {
        let p = PathBuf::from(text(path, "path")?);
        let g = diematch::pipeline::load_graph(&p).map_err(graph_failure)?;
        emit(out, DmGraph(g))
    })
}

/// Builds a graph from a pair-scores CSV (`id_a,id_b,probability,...`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_graph_from_scores_csv(path: *const c_char, out: *mut *mut DmGraph) -> DmStatus {
    run(|| {
        let f = File::open(text(path, "path")?).map_err(|e| Failure::new(DmStatus::Io, e))?;
        let records = read_scores_csv(f).map_err(|e| Failure::new(DmStatus::Parse, e))?;
        let g = graph_from_scores(&[], &records).map_err(graph_failure)?;
        emit(out, DmGraph(g))
    })
}

/// # Safety
/// `graph` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_graph_version(graph: *const DmGraph, out: *mut u64) -> DmStatus {
    run(|| put(out, handle(graph, "graph")?.0.version(), "out"))
}

/// # Safety
/// `graph` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dm_graph_node_count(graph: *const DmGraph, out: *mut usize) -> DmStatus {
    run(|| put(out, handle(graph, "graph")?.0.nodes().len(), "out"))
}

/// Applies a manual edit. `out_version` (optional) receives the graph
/// version afterwards; re-applying an edit already in place leaves it
/// unchanged.
///
/// # Safety
/// `graph` must be a live handle; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dm_graph_apply_edit(
    graph: *mut DmGraph,
    a: *const c_char,
    b: *const c_char,
    action: u32,
    author: *const c_char,
    timestamp: u64,
    out_version: *mut u64,
) -> DmStatus {
    run(|| {
        let g = &mut handle_mut(graph, "graph")?.0;
        let action = match action {
            x if x == DmEditAction::ForcedLink as u32 => EditAction::ForcedLink,
            x if x == DmEditAction::ForcedCut as u32 => EditAction::ForcedCut,
            x if x == DmEditAction::Clear as u32 => EditAction::Clear,
            x => return Err(Failure::new(DmStatus::InvalidArgument, format!("unknown edit action {x}"))),
        };
        let author = if author.is_null() { "anonymous" } else { text(author, "author")? };
        let v = g
            .apply_edit(text(a, "a")?, text(b, "b")?, action, author, timestamp)
            .map_err(graph_failure)?;
        if !out_version.is_null() {
            *out_version = v;
        }
        Ok(())
    })
}

/// Exports the clusters at `tau` into `buf` as NUL-terminated text, the
/// same bytes as `diematch cluster`. On `BufferTooSmall`, `out_len` still
/// receives the required length (without the NUL).
///
/// # Safety
/// `graph` must be a live handle; `buf` valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn dm_graph_export_clusters(
    graph: *const DmGraph,
    tau: f64,
    format: u32,
    buf: *mut c_char,
    capacity: usize,
    out_len: *mut usize,
) -> DmStatus {
    run(|| {
        let g = &handle(graph, "graph")?.0;
        if !(0.0..=1.0).contains(&tau) {
            return Err(Failure::new(DmStatus::InvalidArgument, format!("tau {tau} outside [0, 1]")));
        }
        let format = match format {
            f if f == DmExportFormat::Csv as u32 => ExportFormat::Csv,
            f if f == DmExportFormat::Json as u32 => ExportFormat::Json,
            f => return Err(Failure::new(DmStatus::InvalidArgument, format!("unknown format {f}"))),
        };
        let s = export_at(g, tau, format).map_err(graph_failure)?;
        copy_out(&s, buf, capacity, out_len)
    })
}

/// Writes the graph document to `path` (atomically).
///
/// # Safety
/// `graph` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dm_graph_save(graph: *const DmGraph, path: *const c_char) -> DmStatus {
    run(|| {
        let g = &handle(graph, "graph")?.0;
        persist_graph(g, &PathBuf::from(text(path, "path")?)).map_err(|e| Failure::new(DmStatus::Io, e))
    })
}

/// # Safety
/// `graph` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dm_graph_free(graph: *mut DmGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

// ---- metrics ----

unsafe fn labelings<'a>(pred: *const usize, truth: *const usize, n: usize) -> Result<(&'a [usize], &'a [usize]), Failure> {
    if n == 0 {
        return Ok((&[], &[]));
    }
    non_null(pred, "pred")?;
    non_null(truth, "truth")?;
    Ok((std::slice::from_raw_parts(pred, n), std::slice::from_raw_parts(truth, n)))
}

/// Fowlkes–Mallows index of two labelings of `n` items.
///
/// # Safety
/// `pred` and `truth` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn dm_fmi(pred: *const usize, truth: *const usize, n: usize, out: *mut f64) -> DmStatus {
    run(|| {
        let (p, t) = labelings(pred, truth, n)?;
        let v = fmi_labels(p, t).map_err(|e| Failure::new(DmStatus::InvalidArgument, e))?;
        put(out, v, "out")
    })
}

/// Adjusted Rand index of two labelings of `n` items.
///
/// # Safety
/// `pred` and `truth` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn dm_ari(pred: *const usize, truth: *const usize, n: usize, out: *mut f64) -> DmStatus {
    run(|| {
        let (p, t) = labelings(pred, truth, n)?;
        let v = ari_labels(p, t).map_err(|e| Failure::new(DmStatus::InvalidArgument, e))?;
        put(out, v, "out")
    })
}
