//! Registration benchmark: every intra-die pair of a corpus with known poses
//! is registered by each method and scored by SRE against the ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::manifest::CorpusManifest;
use super::pairwise::{pair_seed, parallel_map, prepare_scans, MethodKind, PairwiseConfig, ScanData};
use super::synth::relative_pose;
use super::PipelineError;
use crate::evalmetrics::{aggregate_sre, render_benchmark_table, sre, DieBenchmarkReport, FaceCategory};
use crate::geom3d::{PointCloud, RigidTransform};
use crate::register::{register_prepared, RegistrationParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    /// Returns the ground truth itself; a sanity row whose SRE is zero.
    GroundTruth,
    Registration(MethodKind),
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchMethod::GroundTruth => f.write_str("gt"),
            BenchMethod::Registration(m) => f.write_str(m.name()),
        }
    }
}

impl FromStr for BenchMethod {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gt" | "ground_truth" => Ok(BenchMethod::GroundTruth),
            other => other.parse().map(BenchMethod::Registration),
        }
    }
}

/// Outcome for one intra-die pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPair {
    pub die: String,
    pub source: String,
    pub target: String,
    pub sre: f64,
    /// Rotation angle of the ground truth, radians.
    pub gt_angle: f64,
    /// Registration failed; `sre` is that of the identity estimate.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodBenchmark {
    pub method: BenchMethod,
    pub report: DieBenchmarkReport,
    /// Mean wall seconds per pair (zero unless timings are recorded).
    pub seconds_per_pair: f64,
    pub pairs: Vec<BenchPair>,
}

impl MethodBenchmark {
    pub fn n_failed(&self) -> usize {
        self.pairs.iter().filter(|p| p.failed).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub methods: Vec<MethodBenchmark>,
    pub die_categories: BTreeMap<String, FaceCategory>,
}

impl BenchmarkResult {
    /// Text table, SRE × 1000, one row per method.
    pub fn table(&self) -> String {
        let rows: Vec<_> = self
            .methods
            .iter()
            .map(|m| (m.method.to_string(), m.report.clone(), m.seconds_per_pair))
            .collect();
        render_benchmark_table(&rows, &self.die_categories)
    }
}

struct PairSpec {
    die: String,
    i: usize,
    j: usize,
    gt: RigidTransform,
}

/// Benchmarks `methods` over every intra-die pair. Entries need a die id and
/// a pose; `clouds`, when given, replaces reading the scan files.
pub fn run_registration_benchmark(
    manifest: &CorpusManifest,
    clouds: Option<&[PointCloud]>,
    methods: &[BenchMethod],
    params: &RegistrationParams,
    record_timings: bool,
    workers: usize,
) -> Result<BenchmarkResult, PipelineError> {
    let mut die_categories = BTreeMap::new();
    let mut pairs = Vec::new();
    for (i, a) in manifest.entries.iter().enumerate() {
        let (Some(die), Some(pose_a)) = (&a.die, &a.pose) else {
            return Err(PipelineError::Manifest(format!("scan {:?} needs a die id and a pose", a.id)));
        };
        die_categories.insert(die.clone(), a.face);
        for (j, b) in manifest.entries.iter().enumerate().skip(i + 1) {
            if b.die.as_ref() != Some(die) {
                continue;
            }
            let pose_b = b.pose.as_ref().ok_or_else(|| PipelineError::Manifest(format!("scan {:?} has no pose", b.id)))?;
            // The canonically first id is the source.
            let (i, j, gt) = if a.id <= b.id {
                (i, j, relative_pose(pose_a, pose_b))
            } else {
                (j, i, relative_pose(pose_b, pose_a))
            };
            pairs.push(PairSpec {
                die: die.clone(),
                i,
                j,
                gt,
            });
        }
    }
    if pairs.is_empty() {
        return Err(PipelineError::Manifest("no intra-die pairs to benchmark".into()));
    }

    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let kind = match method {
            BenchMethod::GroundTruth => MethodKind::IcpRand,
            BenchMethod::Registration(k) => k,
        };
        let config = PairwiseConfig {
            method: kind,
            registration: params.clone(),
            ..Default::default()
        };
        let start = Instant::now();
        let scans = prepare_scans(manifest, clouds, &config, workers)?;
        let results = parallel_map(pairs.len(), workers, |k| bench_pair(&scans, &pairs[k], method, params));
        let elapsed = start.elapsed().as_secs_f64();
        let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

        let mut per_die: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &results {
            per_die.entry(r.die.clone()).or_default().push(r.sre);
        }
        let n_failed = results.iter().filter(|r| r.failed).count();
        if n_failed > 0 {
            log::warn!("{method}: {n_failed} of {} pairs failed and were scored as identity", results.len());
        }
        out.push(MethodBenchmark {
            method,
            report: aggregate_sre(&per_die, &die_categories)?,
            seconds_per_pair: if record_timings {
                elapsed / pairs.len() as f64
            } else {
                0.0
            },
            pairs: results,
        });
    }
    Ok(BenchmarkResult {
        methods: out,
        die_categories,
    })
}

fn bench_pair(
    scans: &[ScanData],
    pair: &PairSpec,
    method: BenchMethod,
    params: &RegistrationParams,
) -> Result<BenchPair, PipelineError> {
    let (src, tgt) = (&scans[pair.i], &scans[pair.j]);
    let (estimate, failed) = match method {
        BenchMethod::GroundTruth => (pair.gt, false),
        BenchMethod::Registration(_) => {
            let params = RegistrationParams {
                seed: pair_seed(params.seed, &src.id, &tgt.id),
                ..params.clone()
            };
            match register_prepared(&src.prepared, &tgt.prepared, &params) {
                Ok(r) => (r.transform, false),
                Err(e) => {
                    log::warn!("{method} {}→{}: {e}", src.id, tgt.id);
                    (RigidTransform::identity(), true)
                }
            }
        }
    };
    Ok(BenchPair {
        die: pair.die.clone(),
        source: src.id.clone(),
        target: tgt.id.clone(),
        sre: sre(&src.prepared.coarse, &pair.gt, &estimate)?,
        gt_angle: pair.gt.rotation_angle(),
        failed,
    })
}
