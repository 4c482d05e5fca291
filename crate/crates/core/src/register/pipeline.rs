//! Full pairwise registration: downsample, describe, match, estimate, refine.

use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::{
    compute_fpfh, load_external_descriptors, match_descriptors, random_restart_icp_indexed, refine_prepared,
    robust_estimate, DescriptorField, RegisterError, RegistrationParams, RegistrationResult, Stage, StageTimings,
};
use crate::geom3d::{voxel_downsample, PointCloud, SpatialIndex};

/// Registration strategy for one pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMethod {
    /// ICP from the identity plus random initial rotations.
    IcpRand,
    /// FPFH matching, robust estimation and neighbourhood refinement.
    Fpfh,
    /// As `Fpfh`, with descriptors read from files whose point indices address
    /// the clouds as loaded.
    External { source: PathBuf, target: PathBuf },
}

/// How descriptors are obtained when preparing a single scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DescriptorSource {
    None,
    Fpfh,
    External(PathBuf),
}

/// Everything registration needs from one scan, computed once and shared by
/// every pair the scan takes part in.
#[derive(Debug, Clone)]
pub struct PreparedScan {
    pub id: String,
    /// The scan on the `voxel_size` grid.
    pub coarse: PointCloud,
    pub index: SpatialIndex,
    pub descriptors: Option<DescriptorField>,
    /// Points addressed by the descriptor sample indices.
    pub keypoints: Vec<Point3<f64>>,
    pub timings: StageTimings,
}

pub fn prepare_scan(
    cloud: &PointCloud,
    descriptors: &DescriptorSource,
    params: &RegistrationParams,
) -> Result<PreparedScan, RegisterError> {
    params.validate()?;
    let mut timings = StageTimings::default();
    let coarse = timings
        .time(Stage::Downsample, || voxel_downsample(cloud, params.voxel_size))
        .map_err(|e| RegisterError::at(Stage::Downsample)(e.into()))?;
    let index = SpatialIndex::new(coarse.points());
    let (field, keypoints) = match descriptors {
        DescriptorSource::None => (None, Vec::new()),
        DescriptorSource::Fpfh => {
            let f = timings
                .time(Stage::Descriptors, || compute_fpfh(&coarse, params.feature_radius))
                .map_err(RegisterError::at(Stage::Descriptors))?;
            (Some(f), coarse.points().to_vec())
        }
        DescriptorSource::External(path) => {
            let f = timings
                .time(Stage::Descriptors, || load_external_descriptors(path, cloud))
                .map_err(RegisterError::at(Stage::Descriptors))?;
            (Some(f), cloud.points().to_vec())
        }
    };
    Ok(PreparedScan {
        id: cloud.id().to_string(),
        coarse,
        index,
        descriptors: field,
        keypoints,
        timings,
    })
}

/// Registers `source` onto `target`. Per-stage wall times are recorded in the
/// result and failures carry the stage they occurred in.
pub fn register_pair(
    source: &PointCloud,
    target: &PointCloud,
    method: &RegistrationMethod,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegisterError> {
    let (src_desc, tgt_desc) = match method {
        RegistrationMethod::IcpRand => (DescriptorSource::None, DescriptorSource::None),
        RegistrationMethod::Fpfh => (DescriptorSource::Fpfh, DescriptorSource::Fpfh),
        RegistrationMethod::External { source, target } => (
            DescriptorSource::External(source.clone()),
            DescriptorSource::External(target.clone()),
        ),
    };
    let src = prepare_scan(source, &src_desc, params)?;
    let tgt = prepare_scan(target, &tgt_desc, params)?;
    let mut result = register_prepared(&src, &tgt, params)?;
    let mut timings = src.timings.clone();
    timings.extend(&tgt.timings);
    timings.extend(&result.timings);
    result.timings = timings;
    Ok(result)
}

/// Registers two prepared scans. Descriptor-based registration is used when
/// both carry descriptors, random-restart ICP when neither does.
pub fn register_prepared(
    source: &PreparedScan,
    target: &PreparedScan,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegisterError> {
    let mut timings = StageTimings::default();
    let mut result = match (&source.descriptors, &target.descriptors) {
        (None, None) => timings
            .time(Stage::Icp, || {
                random_restart_icp_indexed(
                    source.coarse.points(),
                    target.coarse.points(),
                    &target.index,
                    params.n_restarts,
                    params,
                )
            })
            .map_err(RegisterError::at(Stage::Icp))?,
        (Some(fa), Some(fb)) => {
            let corr = timings
                .time(Stage::Matching, || match_descriptors(fa, fb, params.n_descriptor_samples, params.seed))
                .map_err(RegisterError::at(Stage::Matching))?;
            let coarse = timings
                .time(Stage::RobustEstimate, || {
                    robust_estimate(&source.keypoints, &target.keypoints, &corr, params.robust_method, params)
                })
                .map_err(RegisterError::at(Stage::RobustEstimate))?;
            if params.refine {
                timings
                    .time(Stage::Refine, || {
                        refine_prepared(
                            &source.keypoints,
                            &target.keypoints,
                            source.coarse.points(),
                            target.coarse.points(),
                            &coarse,
                            params,
                        )
                    })
                    .map_err(RegisterError::at(Stage::Refine))?
            } else {
                coarse
            }
        }
        _ => {
            return Err(RegisterError::InvalidParameter(
                "both scans must be prepared with the same descriptor source".into(),
            ))
        }
    };
    result.timings = timings;
    Ok(result)
}

/// Convenience for callers holding only paths.
pub fn external_method(source: impl AsRef<Path>, target: impl AsRef<Path>) -> RegistrationMethod {
    RegistrationMethod::External {
        source: source.as_ref().to_path_buf(),
        target: target.as_ref().to_path_buf(),
    }
}
