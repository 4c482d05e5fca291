//! All-pairs scoring over a corpus with a bounded pool of share-nothing
//! workers.
//!
//! Each scan is loaded and prepared once (downsampling, descriptors, spatial
//! indices); every pair then only registers and measures distances. Workers
//! pull pair indices from a shared counter and send finished scores to a
//! single collector, which writes the cache as results arrive. Output is
//! sorted by canonical pair key, so the worker count changes the schedule but
//! never the result.

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use nalgebra::Point3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cache::{config_fingerprint, PairCache};
use super::manifest::{CorpusManifest, Split};
use super::PipelineError;
use crate::evalmetrics::FaceCategory;
use crate::geom3d::{load_point_cloud, voxel_downsample, PointCloud, SpatialIndex};
use crate::register::{
    prepare_scan, register_prepared, DescriptorSource, PreparedScan, RegisterError, RegistrationParams, Stage,
};
use crate::simscore::{
    canonical_pair, score_pair_indexed, train_logistic, write_scores_csv, DistanceHistogram, Label, LogisticModel,
    PairScore, ScoreRecord, SimScoreError, TrainConfig, N_BINS, SOURCE_VOXEL, TARGET_VOXEL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    IcpRand,
    Fpfh,
    /// Per-scan descriptor files named in the manifest.
    External,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::IcpRand => "icp_rand",
            MethodKind::Fpfh => "fpfh",
            MethodKind::External => "external",
        }
    }
}

impl FromStr for MethodKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "icp_rand" => Ok(MethodKind::IcpRand),
            "fpfh" => Ok(MethodKind::Fpfh),
            "external" => Ok(MethodKind::External),
            other => Err(PipelineError::Config(format!(
                "unknown method {other:?} (expected icp_rand, fpfh or external)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairwiseConfig {
    pub method: MethodKind,
    pub registration: RegistrationParams,
    /// Only pair scans showing the same face.
    pub same_face_only: bool,
    /// Keep wall-clock stage timings. Off by default so that outputs are
    /// byte-reproducible; timings are then reported as zero.
    pub record_timings: bool,
    /// Fraction of cache hits recomputed to check the cache is sound.
    pub spot_check_fraction: f64,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        Self {
            method: MethodKind::Fpfh,
            registration: RegistrationParams::default(),
            same_face_only: true,
            record_timings: false,
            spot_check_fraction: 0.01,
        }
    }
}

impl PairwiseConfig {
    /// Fingerprint of everything that determines a pair's score.
    pub fn fingerprint(&self, model: &LogisticModel) -> Result<String, PipelineError> {
        config_fingerprint(&(self.method, &self.registration, SOURCE_VOXEL, TARGET_VOXEL), model)
    }
}

/// A scan prepared for pairwise work.
#[derive(Debug, Clone)]
pub struct ScanData {
    pub id: String,
    pub face: FaceCategory,
    pub prepared: PreparedScan,
    /// Scan on the source grid used for distances.
    pub source: Vec<Point3<f64>>,
    /// Scan on the target grid used for distances, with its index.
    pub fine: Vec<Point3<f64>>,
    pub fine_index: SpatialIndex,
}

impl ScanData {
    pub fn new(
        cloud: &PointCloud,
        face: FaceCategory,
        descriptors: &DescriptorSource,
        params: &RegistrationParams,
    ) -> Result<Self, PipelineError> {
        let prepared = prepare_scan(cloud, descriptors, params)?;
        let source = if params.voxel_size == SOURCE_VOXEL {
            prepared.coarse.points().to_vec()
        } else {
            voxel_downsample(cloud, SOURCE_VOXEL)?.points().to_vec()
        };
        let fine = voxel_downsample(cloud, TARGET_VOXEL)?.points().to_vec();
        let fine_index = SpatialIndex::new(&fine);
        Ok(Self {
            id: cloud.id().to_string(),
            face,
            prepared,
            source,
            fine,
            fine_index,
        })
    }
}

/// Default worker count: the machine's available parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs `job(0..n)` on `workers` threads, handing each result to `collect`
/// on the calling thread in completion order.
pub fn parallel_for_each<T, F, C>(n: usize, workers: usize, job: F, mut collect: C)
where
    T: Send,
    F: Fn(usize) -> T + Sync,
    C: FnMut(usize, T),
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        for i in 0..n {
            collect(i, job(i));
        }
        return;
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, job) = (&next, &job);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n || tx.send((i, job(i))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, out) in rx {
            collect(i, out);
        }
    });
}

/// Ordered `parallel_for_each`.
pub fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, workers: usize, job: F) -> Vec<T> {
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    parallel_for_each(n, workers, job, |i, v| out[i] = Some(v));
    out.into_iter().map(|v| v.expect("every job reports")).collect()
}

/// Loads and prepares every manifest scan. `clouds`, when given, replaces
/// reading the files (in manifest order).
pub fn prepare_scans(
    manifest: &CorpusManifest,
    clouds: Option<&[PointCloud]>,
    config: &PairwiseConfig,
    workers: usize,
) -> Result<Vec<ScanData>, PipelineError> {
    if let Some(c) = clouds {
        if c.len() != manifest.len() {
            return Err(PipelineError::Config(format!(
                "{} clouds for {} manifest entries",
                c.len(),
                manifest.len()
            )));
        }
    }
    config.registration.validate()?;
    let results = parallel_map(manifest.len(), workers, |k| {
        let e = &manifest.entries[k];
        let prepare = || -> Result<ScanData, PipelineError> {
            let mut cloud = match clouds {
                Some(c) => c[k].clone(),
                None => load_point_cloud(manifest.scan_path(e), config.method == MethodKind::Fpfh)?,
            };
            cloud.set_id(e.id.clone());
            let descriptors = match config.method {
                MethodKind::IcpRand => DescriptorSource::None,
                MethodKind::Fpfh => DescriptorSource::Fpfh,
                MethodKind::External => {
                    let p = e.descriptors.as_ref().ok_or_else(|| {
                        PipelineError::Manifest("no descriptor file for the external method".into())
                    })?;
                    DescriptorSource::External(manifest.resolve(p))
                }
            };
            ScanData::new(&cloud, e.face, &descriptors, &config.registration)
        };
        prepare().map_err(PipelineError::for_scan(&e.id))
    });
    results.into_iter().collect()
}

/// Unordered index pairs `(i, j)`, `i < j`, optionally restricted to scans
/// of the same face.
pub fn schedule_pairs(faces: &[FaceCategory], same_face_only: bool) -> Vec<(usize, usize)> {
    let n = faces.len();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            if !same_face_only || faces[i] == faces[j] {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Seed for one pair: the configured seed mixed with an FNV-1a hash of the
/// canonical key, so it does not depend on schedule position.
pub fn pair_seed(seed: u64, a: &str, b: &str) -> u64 {
    let (a, b) = canonical_pair(a, b);
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in a.bytes().chain(std::iter::once(0)).chain(b.bytes()) {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub id_a: String,
    pub id_b: String,
    pub stage: Option<Stage>,
    pub message: String,
}

fn failure(a: &str, b: &str, stage: Option<Stage>, message: String) -> PairFailure {
    PairFailure {
        id_a: a.to_string(),
        id_b: b.to_string(),
        stage,
        message,
    }
}

/// Registers and scores one pair. The canonically first id is always the
/// registration source.
pub fn score_scans(
    a: &ScanData,
    b: &ScanData,
    model: &LogisticModel,
    config: &PairwiseConfig,
) -> Result<PairScore, PairFailure> {
    let (src, tgt) = if a.id <= b.id { (a, b) } else { (b, a) };
    let params = RegistrationParams {
        seed: pair_seed(config.registration.seed, &src.id, &tgt.id),
        ..config.registration.clone()
    };
    let reg = register_prepared(&src.prepared, &tgt.prepared, &params)
        .map_err(|e: RegisterError| failure(&src.id, &tgt.id, e.stage(), e.to_string()))?;
    let mut score = score_pair_indexed(&src.id, &src.source, &tgt.id, &tgt.fine, &tgt.fine_index, &reg, model)
        .map_err(|e: SimScoreError| {
            let stage = match e {
                SimScoreError::EmptyCloud => Stage::Distances,
                _ => Stage::Predict,
            };
            failure(&src.id, &tgt.id, Some(stage), e.to_string())
        })?;
    if !config.record_timings {
        for t in &mut score.stage_timings.0 {
            t.1 = 0.0;
        }
    }
    Ok(score)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairwiseReport {
    /// Sorted by `(id_a, id_b)`.
    pub scores: Vec<PairScore>,
    /// Sorted by `(id_a, id_b)`.
    pub failures: Vec<PairFailure>,
    pub scheduled: usize,
    pub cache_hits: usize,
    pub computed: usize,
    pub spot_checked: usize,
    /// Cached scores that differed from recomputation (replaced).
    pub spot_check_mismatches: usize,
}

impl PairwiseReport {
    pub fn records(&self) -> Vec<ScoreRecord> {
        self.scores.iter().map(ScoreRecord::from).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), PipelineError> {
        write_scores_csv(&self.records(), out)?;
        Ok(())
    }

    /// One line per failed pair plus a count, for logs.
    pub fn failure_summary(&self) -> String {
        let mut s = format!("{} of {} pairs failed\n", self.failures.len(), self.scheduled);
        for f in &self.failures {
            let stage = f.stage.map_or_else(|| "-".to_string(), |s| s.to_string());
            s.push_str(&format!("{},{},{stage}: {}\n", f.id_a, f.id_b, f.message));
        }
        s
    }
}

enum Job {
    Compute(usize, usize),
    SpotCheck(usize, usize),
}

/// Scores every scheduled pair of prepared scans.
pub fn run_pairwise_scans(
    scans: &[ScanData],
    model: &LogisticModel,
    config: &PairwiseConfig,
    workers: usize,
    mut cache: Option<&mut PairCache>,
) -> Result<PairwiseReport, PipelineError> {
    if model.dimension() != N_BINS {
        return Err(SimScoreError::DimensionMismatch(format!(
            "model has {} weights, histograms have {N_BINS} bins",
            model.dimension()
        ))
        .into());
    }
    if let Some(c) = cache.as_deref() {
        let expected = config.fingerprint(model)?;
        if c.fingerprint() != expected {
            return Err(PipelineError::Config("cache fingerprint does not match the configuration".into()));
        }
    }
    let faces: Vec<FaceCategory> = scans.iter().map(|s| s.face).collect();
    let pairs = schedule_pairs(&faces, config.same_face_only);

    let mut report = PairwiseReport {
        scheduled: pairs.len(),
        ..Default::default()
    };
    let mut scores = Vec::with_capacity(pairs.len());
    let mut jobs = Vec::new();
    let mut hits = Vec::new();
    for &(i, j) in &pairs {
        match cache.as_deref().and_then(|c| c.get(&scans[i].id, &scans[j].id)) {
            Some(s) => hits.push((i, j, s.clone())),
            None => jobs.push(Job::Compute(i, j)),
        }
    }
    report.cache_hits = hits.len();
    let n_checks = if hits.is_empty() || config.spot_check_fraction <= 0.0 {
        0
    } else {
        ((hits.len() as f64 * config.spot_check_fraction).ceil() as usize).min(hits.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.registration.seed ^ 0x5107_c4ec);
    let mut checked: Vec<usize> = sample(&mut rng, hits.len(), n_checks).into_vec();
    checked.sort_unstable();
    for &k in &checked {
        jobs.push(Job::SpotCheck(hits[k].0, hits[k].1));
    }
    let mut cached: std::collections::BTreeMap<(usize, usize), PairScore> =
        hits.into_iter().map(|(i, j, s)| ((i, j), s)).collect();

    let mut write_error = None;
    parallel_for_each(
        jobs.len(),
        workers,
        |k| {
            let (Job::Compute(i, j) | Job::SpotCheck(i, j)) = jobs[k];
            score_scans(&scans[i], &scans[j], model, config)
        },
        |k, result| match (&jobs[k], result) {
            (Job::Compute(..), Ok(score)) => {
                report.computed += 1;
                if let Some(c) = cache.as_deref_mut() {
                    if let Err(e) = c.insert(score.clone()) {
                        write_error.get_or_insert(e);
                    }
                }
                scores.push(score);
            }
            (Job::Compute(..), Err(f)) => report.failures.push(f),
            (&Job::SpotCheck(i, j), result) => {
                report.spot_checked += 1;
                let old = &cached[&(i, j)];
                let same = match &result {
                    Ok(s) => same_score(old, s),
                    Err(_) => false,
                };
                if !same {
                    log::warn!("cached score for {},{} differs from recomputation", old.id_a, old.id_b);
                    report.spot_check_mismatches += 1;
                    match result {
                        Ok(s) => {
                            if let Some(c) = cache.as_deref_mut() {
                                if let Err(e) = c.insert(s.clone()) {
                                    write_error.get_or_insert(e);
                                }
                            }
                            cached.insert((i, j), s);
                        }
                        Err(f) => {
                            cached.remove(&(i, j));
                            report.failures.push(f);
                        }
                    }
                }
            }
        },
    );
    if let Some(e) = write_error {
        return Err(e);
    }
    scores.extend(cached.into_values());
    scores.sort_by(|x, y| x.key().cmp(&y.key()));
    report.failures.sort_by(|x, y| (&x.id_a, &x.id_b).cmp(&(&y.id_a, &y.id_b)));
    report.scores = scores;
    if !report.failures.is_empty() {
        log::debug!("{}", report.failure_summary().trim_end());
    }
    Ok(report)
}

/// Scores compare equal ignoring wall-clock timings.
fn same_score(a: &PairScore, b: &PairScore) -> bool {
    a.id_a == b.id_a
        && a.id_b == b.id_b
        && a.transform == b.transform
        && a.histogram == b.histogram
        && a.probability == b.probability
        && a.rmse == b.rmse
}

/// Loads, prepares and scores a manifest.
pub fn run_pairwise(
    manifest: &CorpusManifest,
    model: &LogisticModel,
    config: &PairwiseConfig,
    workers: usize,
    cache: Option<&mut PairCache>,
) -> Result<PairwiseReport, PipelineError> {
    let scans = prepare_scans(manifest, None, config, workers)?;
    run_pairwise_scans(&scans, model, config, workers, cache)
}

/// Summary of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub n_pairs: usize,
    pub n_failed: usize,
    pub train_accuracy: f64,
}

/// Distance histograms of the given pairs (registration failures are
/// `None`).
pub fn pair_histograms(
    scans: &[ScanData],
    pairs: &[(usize, usize)],
    config: &PairwiseConfig,
    workers: usize,
) -> Vec<Option<DistanceHistogram>> {
    let probe = LogisticModel::new(vec![0.0; N_BINS], 0.0).expect("finite");
    parallel_map(pairs.len(), workers, |k| {
        let (i, j) = pairs[k];
        score_scans(&scans[i], &scans[j], &probe, config).ok().map(|s| s.histogram)
    })
}

/// Fits the same-die model on every same-face pair of scans with known dies.
pub fn train_from_scans(
    scans: &[ScanData],
    dies: &[String],
    config: &PairwiseConfig,
    train: &TrainConfig,
    workers: usize,
) -> Result<(LogisticModel, TrainingReport), PipelineError> {
    if dies.len() != scans.len() {
        return Err(PipelineError::Config("one die label per scan required".into()));
    }
    let faces: Vec<FaceCategory> = scans.iter().map(|s| s.face).collect();
    let pairs = schedule_pairs(&faces, config.same_face_only);
    let hists = pair_histograms(scans, &pairs, config, workers);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (&(i, j), h) in pairs.iter().zip(hists) {
        if let Some(h) = h {
            features.push(h);
            labels.push(if dies[i] == dies[j] {
                Label::SameDie
            } else {
                Label::DifferentDie
            });
        }
    }
    let n_failed = pairs.len() - features.len();
    let model = train_logistic(&features, &labels, train)?;
    let report = TrainingReport {
        n_pairs: features.len(),
        n_failed,
        train_accuracy: model.meta.train_accuracy,
    };
    Ok((model, report))
}

/// Trains on the manifest's training split (every entry when no split is
/// assigned). Entries must carry die ids.
pub fn train_from_manifest(
    manifest: &CorpusManifest,
    config: &PairwiseConfig,
    train: &TrainConfig,
    workers: usize,
) -> Result<(LogisticModel, TrainingReport), PipelineError> {
    let entries: Vec<_> = manifest.split(Split::Train).into_iter().cloned().collect();
    let dies = entries
        .iter()
        .map(|e| {
            e.die
                .clone()
                .ok_or_else(|| PipelineError::Manifest(format!("scan {:?} has no die label", e.id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let subset = CorpusManifest {
        entries,
        base_dir: manifest.base_dir.clone(),
    };
    let scans = prepare_scans(&subset, None, config, workers)?;
    train_from_scans(&scans, &dies, config, train, workers)
}
