//! Same-die probability for an aligned scan pair.
//!
//! After registration, nearest-neighbour distances are computed in both
//! directions, each direction is binned into a truncated frequency histogram,
//! the two histograms are averaged, and a logistic model maps the result to a
//! probability.

mod logistic;

use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

pub use logistic::{
    accuracy, loss_and_gradient, predict, read_model, train_logistic, write_model, Label, LogisticModel,
    TrainConfig, TrainingMeta,
};

use crate::geom3d::{PointCloud, RigidTransform, SpatialIndex};
use crate::register::{RegistrationResult, Stage, StageTimings};

pub const N_BINS: usize = 70;
/// Distances at or beyond this value (mm) are discarded.
pub const CUTOFF: f64 = 0.6;
/// Grid for the scored source cloud.
pub const SOURCE_VOXEL: f64 = 0.1;
/// Grid for the scored target cloud.
pub const TARGET_VOXEL: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum SimScoreError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("training needs at least one example of each class")]
    SingleClassTraining,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite model parameter or feature")]
    NonFinite,
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error("malformed score file: {0}")]
    MalformedScores(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Nearest-neighbour distances of an aligned pair, in mm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistanceSamples {
    /// Transformed source point -> nearest target point.
    pub d_fwd: Vec<f64>,
    /// Target point -> nearest transformed source point.
    pub d_bwd: Vec<f64>,
}

/// Bidirectional cloud-to-cloud distances with `t` mapping source onto
/// target.
pub fn cloud_to_cloud(
    source: &PointCloud,
    target: &PointCloud,
    t: &RigidTransform,
) -> Result<DistanceSamples, SimScoreError> {
    if target.is_empty() {
        return Err(SimScoreError::EmptyCloud);
    }
    let index = SpatialIndex::new(target.points());
    cloud_to_cloud_indexed(source.points(), target.points(), &index, t)
}

/// [`cloud_to_cloud`] with a prebuilt index over `target`.
pub fn cloud_to_cloud_indexed(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    target_index: &SpatialIndex,
    t: &RigidTransform,
) -> Result<DistanceSamples, SimScoreError> {
    if source.is_empty() || target.is_empty() {
        return Err(SimScoreError::EmptyCloud);
    }
    let moved: Vec<Point3<f64>> = source.iter().map(|p| t.apply_point(p)).collect();
    let d_fwd = moved
        .iter()
        .map(|p| target_index.nearest(p).map_or(f64::INFINITY, |(_, d)| d))
        .collect();
    let moved_index = SpatialIndex::new(&moved);
    let d_bwd = target
        .iter()
        .map(|q| moved_index.nearest(q).map_or(f64::INFINITY, |(_, d)| d))
        .collect();
    Ok(DistanceSamples { d_fwd, d_bwd })
}

/// Mean of the forward and backward frequency histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    pub bins: Vec<f64>,
    pub cutoff: f64,
    /// Set when neither direction had a distance under the cutoff.
    #[serde(default)]
    pub empty: bool,
}

impl DistanceHistogram {
    pub fn bin_width(&self) -> f64 {
        self.cutoff / self.bins.len() as f64
    }

    /// All mass in the first bin: the histogram of a perfectly aligned copy.
    pub fn zero_distance() -> Self {
        let mut bins = vec![0.0; N_BINS];
        bins[0] = 1.0;
        Self {
            bins,
            cutoff: CUTOFF,
            empty: false,
        }
    }
}

/// Bin index of `d` in `[0, CUTOFF)`, or `None` when it is discarded.
pub fn bin_index(d: f64) -> Option<usize> {
    if !(0.0..CUTOFF).contains(&d) {
        return None;
    }
    Some(((d * N_BINS as f64 / CUTOFF) as usize).min(N_BINS - 1))
}

/// Frequency histogram of one direction: counts divided by the number of
/// in-range samples, all zeros when there are none.
pub fn side_histogram(distances: &[f64]) -> Vec<f64> {
    let mut bins = vec![0.0; N_BINS];
    let mut kept = 0usize;
    for &d in distances {
        if let Some(b) = bin_index(d) {
            bins[b] += 1.0;
            kept += 1;
        }
    }
    if kept > 0 {
        let n = kept as f64;
        bins.iter_mut().for_each(|b| *b /= n);
    }
    bins
}

pub fn histogram(samples: &DistanceSamples) -> DistanceHistogram {
    let fwd = side_histogram(&samples.d_fwd);
    let bwd = side_histogram(&samples.d_bwd);
    let empty = fwd.iter().all(|&v| v == 0.0) && bwd.iter().all(|&v| v == 0.0);
    if empty {
        log::warn!("no distance under the {CUTOFF} mm cutoff; histogram is all zeros");
    }
    DistanceHistogram {
        bins: fwd.iter().zip(&bwd).map(|(a, b)| 0.5 * (a + b)).collect(),
        cutoff: CUTOFF,
        empty,
    }
}

/// Scored scan pair. `id_a < id_b`; `transform` maps `id_a` onto `id_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub id_a: String,
    pub id_b: String,
    pub transform: RigidTransform,
    pub histogram: DistanceHistogram,
    pub probability: f64,
    /// Registration RMSE in mm.
    pub rmse: f64,
    pub stage_timings: StageTimings,
}

impl PairScore {
    pub fn key(&self) -> (&str, &str) {
        (&self.id_a, &self.id_b)
    }

    pub fn seconds(&self) -> f64 {
        self.stage_timings.total()
    }
}

/// Orders two ids into the canonical undirected pair key.
pub fn canonical_pair<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Scores a registered pair. `source` is expected on the [`SOURCE_VOXEL`]
/// grid and `target` on the [`TARGET_VOXEL`] grid.
pub fn score_pair(
    source: &PointCloud,
    target: &PointCloud,
    reg: &RegistrationResult,
    model: &LogisticModel,
) -> Result<PairScore, SimScoreError> {
    if target.is_empty() {
        return Err(SimScoreError::EmptyCloud);
    }
    let index = SpatialIndex::new(target.points());
    score_pair_indexed(source.id(), source.points(), target.id(), target.points(), &index, reg, model)
}

/// [`score_pair`] over raw point sets with a prebuilt target index.
pub fn score_pair_indexed(
    source_id: &str,
    source: &[Point3<f64>],
    target_id: &str,
    target: &[Point3<f64>],
    target_index: &SpatialIndex,
    reg: &RegistrationResult,
    model: &LogisticModel,
) -> Result<PairScore, SimScoreError> {
    let mut timings = reg.timings.clone();
    let samples = timings.time(Stage::Distances, || {
        cloud_to_cloud_indexed(source, target, target_index, &reg.transform)
    })?;
    let hist = timings.time(Stage::Histogram, || histogram(&samples));
    let start = Instant::now();
    let probability = predict(model, &hist)?;
    timings.record(Stage::Predict, start.elapsed().as_secs_f64());

    let (id_a, id_b, transform) = if source_id <= target_id {
        (source_id, target_id, reg.transform)
    } else {
        (target_id, source_id, reg.transform.inverse())
    };
    Ok(PairScore {
        id_a: id_a.to_string(),
        id_b: id_b.to_string(),
        transform,
        histogram: hist,
        probability,
        rmse: reg.rmse,
        stage_timings: timings,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    id_a: String,
    id_b: String,
    probability: f64,
    rmse: f64,
    seconds: f64,
}

/// Flat view of a score as written to CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id_a: String,
    pub id_b: String,
    pub probability: f64,
    pub rmse: f64,
    pub seconds: f64,
}

impl From<&PairScore> for ScoreRecord {
    fn from(s: &PairScore) -> Self {
        Self {
            id_a: s.id_a.clone(),
            id_b: s.id_b.clone(),
            probability: s.probability,
            rmse: s.rmse,
            seconds: s.seconds(),
        }
    }
}

/// Writes `id_a,id_b,probability,rmse,seconds` rows in the given order.
pub fn write_scores_csv<W: Write>(records: &[ScoreRecord], out: W) -> Result<(), SimScoreError> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(["id_a", "id_b", "probability", "rmse", "seconds"])?;
    }
    for r in records {
        w.serialize(ScoreRow {
            id_a: r.id_a.clone(),
            id_b: r.id_b.clone(),
            probability: r.probability,
            rmse: r.rmse,
            seconds: r.seconds,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(input: R) -> Result<Vec<ScoreRecord>, SimScoreError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize::<ScoreRow>() {
        let row = row?;
        if !(0.0..=1.0).contains(&row.probability) {
            return Err(SimScoreError::MalformedScores(format!(
                "probability {} for ({}, {}) outside [0, 1]",
                row.probability, row.id_a, row.id_b
            )));
        }
        out.push(ScoreRecord {
            id_a: row.id_a,
            id_b: row.id_b,
            probability: row.probability,
            rmse: row.rmse,
            seconds: row.seconds,
        });
    }
    Ok(out)
}
