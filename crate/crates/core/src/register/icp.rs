//! Point-to-point ICP and its random-restart wrapper.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fit_rigid, CorrespondenceSet, RegisterError, RegistrationParams, RegistrationResult, StageTimings};
use crate::geom3d::{centroid, PointCloud, RigidTransform, RotationRanges, SpatialIndex};

/// ICP from `init`, building the target index on the fly.
pub fn icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegisterError> {
    if source.is_empty() || target.is_empty() {
        return Err(crate::geom3d::Geom3dError::EmptyCloud.into());
    }
    let index = SpatialIndex::new(target.points());
    icp_indexed(source.points(), target.points(), &index, init, params)
}

/// Largest displacement between two transforms over the box spanned by
/// `corners`. Displacement is affine in the point, so its maximum over a box
/// is reached at a corner.
fn max_displacement(a: &RigidTransform, b: &RigidTransform, corners: &[Point3<f64>; 8]) -> f64 {
    corners
        .iter()
        .map(|c| (a.apply_point(c) - b.apply_point(c)).norm())
        .fold(0.0, f64::max)
}

fn bounding_corners(points: &[Point3<f64>]) -> [Point3<f64>; 8] {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    let mut out = [Point3::origin(); 8];
    for (k, c) in out.iter_mut().enumerate() {
        *c = Point3::new(
            if k & 1 == 0 { lo.x } else { hi.x },
            if k & 2 == 0 { lo.y } else { hi.y },
            if k & 4 == 0 { lo.z } else { hi.z },
        );
    }
    out
}

/// ICP against a prebuilt index over `target`.
///
/// Each iteration matches every transformed source point to its closest
/// target point, drops matches farther than `match_max_distance`, and refits
/// with Kabsch. An iteration whose match RMSE exceeds the previous accepted
/// one is rejected and ends the loop, so `rmse_history` is non-increasing.
pub fn icp_indexed(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    target_index: &SpatialIndex,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegisterError> {
    if source.is_empty() || target.is_empty() {
        return Err(crate::geom3d::Geom3dError::EmptyCloud.into());
    }
    let gate_sq = params.match_max_distance * params.match_max_distance;
    let corners = bounding_corners(source);

    let mut current = *init;
    let mut accepted: Option<(Vec<(usize, usize)>, f64, RigidTransform)> = None;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut matches: Vec<(usize, usize)> = Vec::with_capacity(source.len());

    for _ in 0..params.max_iterations {
        matches.clear();
        let mut sum_sq = 0.0;
        for (i, p) in source.iter().enumerate() {
            if let Some((j, d2)) = target_index.nearest_sq(&current.apply_point(p)) {
                if d2 <= gate_sq {
                    matches.push((i, j));
                    sum_sq += d2;
                }
            }
        }
        if matches.is_empty() {
            if accepted.is_some() {
                break;
            }
            return Err(RegisterError::NoMatchesInRange);
        }
        let rmse = (sum_sq / matches.len() as f64).sqrt();
        if let Some((_, prev, _)) = &accepted {
            if rmse > *prev {
                break;
            }
        }
        let next = match fit_rigid(matches.iter().map(|&(i, j)| (&source[i], &target[j]))) {
            Ok(t) => t,
            Err(e) if accepted.is_none() => return Err(e),
            Err(_) => break,
        };
        iterations += 1;
        history.push(rmse);
        accepted = Some((matches.clone(), rmse, current));
        let change = max_displacement(&next, &current, &corners);
        current = next;
        if change < params.convergence_eps {
            converged = true;
            break;
        }
    }

    let (inliers, rmse, _) = accepted.ok_or(RegisterError::NoMatchesInRange)?;
    Ok(RegistrationResult {
        transform: current,
        inliers: CorrespondenceSet::from_trusted(inliers),
        rmse,
        converged,
        iterations,
        rmse_history: history,
        timings: StageTimings::default(),
    })
}

/// ICP from the identity rotation plus `n_restarts` random initial rotations
/// drawn from the benchmark ranges. Every start rotates the source about its
/// centroid and moves that centroid onto the target centroid. The best run
/// is the one with the lowest RMSE among those matching at least
/// `min_overlap` of the source points.
pub fn random_restart_icp(
    source: &PointCloud,
    target: &PointCloud,
    n_restarts: usize,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegisterError> {
    if source.is_empty() || target.is_empty() {
        return Err(crate::geom3d::Geom3dError::EmptyCloud.into());
    }
    let index = SpatialIndex::new(target.points());
    random_restart_icp_indexed(source.points(), target.points(), &index, n_restarts, params)
}

pub fn random_restart_icp_indexed(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    target_index: &SpatialIndex,
    n_restarts: usize,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegisterError> {
    if n_restarts == 0 {
        return Err(RegisterError::InvalidParameter("n_restarts must be at least 1".into()));
    }
    let (Some(src_c), Some(tgt_c)) = (centroid(source), centroid(target)) else {
        return Err(crate::geom3d::Geom3dError::EmptyCloud.into());
    };
    let shift = RigidTransform::from_translation(tgt_c - src_c);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let min_inliers = ((params.min_overlap * source.len() as f64).ceil() as usize).max(3);

    let mut best: Option<RegistrationResult> = None;
    let mut total_iterations = 0;
    for run in 0..=n_restarts {
        let rotation = if run == 0 {
            nalgebra::Rotation3::identity()
        } else {
            RotationRanges::BENCHMARK.sample(&mut rng).0
        };
        let init = shift.after(&RigidTransform::rotation_about(&rotation, &src_c));
        let Ok(result) = icp_indexed(source, target, target_index, &init, params) else {
            continue;
        };
        total_iterations += result.iterations;
        if result.inliers.len() < min_inliers {
            continue;
        }
        if best.as_ref().is_none_or(|b| result.rmse < b.rmse) {
            best = Some(result);
        }
    }
    let mut best = best.ok_or(RegisterError::AllRestartsFailed)?;
    best.iterations = total_iterations;
    Ok(best)
}
