//! Rigid registration of coin-face scans.
//!
//! Two families of methods are provided:
//!
//! * local ICP, optionally restarted from random initial rotations;
//! * descriptor matching (FPFH computed here, or externally computed learned
//!   descriptors), mutual nearest-neighbour filtering, a robust estimator
//!   (RANSAC or a pairwise-consistency clique) and an ICP refinement restricted
//!   to the neighbourhood of the accepted matches.

mod descriptors;
mod fpfh;
mod icp;
mod kabsch;
mod pipeline;
mod robust;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use descriptors::{load_external_descriptors, match_descriptors, parse_external_descriptors, DescriptorField};
pub use fpfh::{compute_fpfh, FPFH_BINS, FPFH_DIM};
pub use icp::{icp, icp_indexed, random_restart_icp, random_restart_icp_indexed};
pub use kabsch::{fit_rigid, kabsch, squared_error};
pub use pipeline::{
    external_method, prepare_scan, register_pair, register_prepared, DescriptorSource, PreparedScan, RegistrationMethod,
};
pub use robust::{
    inliers_under, refine_icp, refine_prepared, robust_estimate, search_ransac_hypotheses, HypothesisSearch,
    RobustMethod,
};

use crate::geom3d::{Geom3dError, RigidTransform};

#[derive(Debug, thiserror::Error)]
pub enum RegisterError {
    #[error("need at least 3 correspondences, got {0}")]
    TooFewMatches(usize),
    #[error("correspondences are degenerate (collinear or coincident)")]
    DegenerateConfiguration,
    #[error("no closest-point match within the distance gate")]
    NoMatchesInRange,
    #[error("every ICP restart failed")]
    AllRestartsFailed,
    #[error("no mutual descriptor matches")]
    NoMutualMatches,
    #[error("robust estimation found no consensus")]
    NoConsensus,
    #[error("descriptor dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("descriptor index {index} out of range for cloud of {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite descriptor value on row {0}")]
    NonFiniteValue(usize),
    #[error("malformed descriptor file: {0}")]
    MalformedDescriptors(String),
    #[error("invalid correspondence set: {0}")]
    InvalidCorrespondences(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] Geom3dError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<RegisterError>,
    },
}

impl RegisterError {
    pub(crate) fn at(stage: Stage) -> impl FnOnce(RegisterError) -> RegisterError {
        move |e| match e {
            already @ RegisterError::Stage { .. } => already,
            other => RegisterError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The stage tag, when the error was raised inside a pipeline stage.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            RegisterError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

/// Pipeline stages used for timing and error tagging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Downsample,
    Descriptors,
    Matching,
    RobustEstimate,
    Refine,
    Icp,
    Distances,
    Histogram,
    Predict,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Load => "load",
            Stage::Downsample => "downsample",
            Stage::Descriptors => "descriptors",
            Stage::Matching => "matching",
            Stage::RobustEstimate => "robust_estimate",
            Stage::Refine => "refine",
            Stage::Icp => "icp",
            Stage::Distances => "distances",
            Stage::Histogram => "histogram",
            Stage::Predict => "predict",
        };
        f.write_str(name)
    }
}

/// Wall-clock seconds spent per stage, in execution order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings(pub Vec<(Stage, f64)>);

impl StageTimings {
    pub fn record(&mut self, stage: Stage, seconds: f64) {
        self.0.push((stage, seconds));
    }

    /// Runs `f`, recording its duration under `stage`.
    pub fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed().as_secs_f64());
        out
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|(_, s)| s).sum()
    }

    pub fn get(&self, stage: Stage) -> f64 {
        self.0.iter().filter(|(s, _)| *s == stage).map(|(_, t)| t).sum()
    }

    pub fn extend(&mut self, other: &StageTimings) {
        self.0.extend(other.0.iter().copied());
    }
}

/// Index pairs `(source, target)` into two point sets. Indices are validated
/// against the set sizes and pairs are unique.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pairs: Vec<(usize, usize)>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(usize, usize)>, source_len: usize, target_len: usize) -> Result<Self, RegisterError> {
        let mut seen = std::collections::HashSet::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            if i >= source_len || j >= target_len {
                return Err(RegisterError::InvalidCorrespondences(format!(
                    "pair ({i}, {j}) out of range for sizes ({source_len}, {target_len})"
                )));
            }
            if !seen.insert((i, j)) {
                return Err(RegisterError::InvalidCorrespondences(format!("duplicate pair ({i}, {j})")));
            }
        }
        Ok(Self { pairs })
    }

    /// Caller guarantees range validity and uniqueness.
    pub(crate) fn from_trusted(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Same correspondences with source and target swapped.
    pub fn swapped(&self) -> Self {
        Self {
            pairs: self.pairs.iter().map(|&(i, j)| (j, i)).collect(),
        }
    }
}

/// Output of every registration method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub inliers: CorrespondenceSet,
    /// Root-mean-square residual over `inliers`, in mm.
    pub rmse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Inlier RMSE after each accepted ICP iteration (empty for non-ICP
    /// estimators).
    #[serde(default)]
    pub rmse_history: Vec<f64>,
    #[serde(default)]
    pub timings: StageTimings,
}

/// Tuning for every registration method. Lengths are in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    pub max_iterations: usize,
    pub convergence_eps: f64,
    pub match_max_distance: f64,
    /// Descriptors sampled per cloud before matching.
    pub n_descriptor_samples: usize,
    pub ransac_iterations: usize,
    pub inlier_threshold: f64,
    pub refinement_radius: f64,
    pub n_restarts: usize,
    /// Fraction of source points an ICP restart must match to be eligible.
    pub min_overlap: f64,
    pub feature_radius: f64,
    /// Grid used to downsample both scans before registration.
    pub voxel_size: f64,
    pub robust_method: RobustMethod,
    /// Run the neighbourhood ICP after robust estimation.
    pub refine: bool,
    pub seed: u64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            convergence_eps: 1e-4,
            match_max_distance: 1.0,
            n_descriptor_samples: 5000,
            ransac_iterations: 10_000,
            inlier_threshold: 0.15,
            refinement_radius: 1.0,
            n_restarts: 32,
            min_overlap: 0.3,
            feature_radius: 1.0,
            voxel_size: 0.1,
            robust_method: RobustMethod::Clique,
            refine: true,
            seed: 0,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<(), RegisterError> {
        let positive = [
            ("convergence_eps", self.convergence_eps),
            ("match_max_distance", self.match_max_distance),
            ("inlier_threshold", self.inlier_threshold),
            ("refinement_radius", self.refinement_radius),
            ("feature_radius", self.feature_radius),
            ("voxel_size", self.voxel_size),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RegisterError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("max_iterations", self.max_iterations),
            ("n_descriptor_samples", self.n_descriptor_samples),
            ("ransac_iterations", self.ransac_iterations),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(RegisterError::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.min_overlap) {
            return Err(RegisterError::InvalidParameter("min_overlap must be in [0, 1]".into()));
        }
        Ok(())
    }
}
