//! Outlier-robust transform estimation from putative correspondences, and the
//! ICP refinement around the accepted matches.

use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    fit_rigid, icp_indexed, CorrespondenceSet, RegisterError, RegistrationParams, RegistrationResult, StageTimings,
};
use crate::geom3d::{PointCloud, RigidTransform, SpatialIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustMethod {
    /// Seeded minimal-sample consensus.
    Ransac,
    /// Pairwise length-consistency graph, greedy maximal clique, Kabsch.
    Clique,
}

impl std::str::FromStr for RobustMethod {
    type Err = RegisterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ransac" => Ok(RobustMethod::Ransac),
            "clique" => Ok(RobustMethod::Clique),
            other => Err(RegisterError::InvalidParameter(format!("unknown robust method {other:?}"))),
        }
    }
}

/// Correspondences whose residual under `t` is at most `threshold`.
pub fn inliers_under(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    corr: &CorrespondenceSet,
    t: &RigidTransform,
    threshold: f64,
) -> Vec<(usize, usize)> {
    let thr_sq = threshold * threshold;
    corr.pairs()
        .iter()
        .copied()
        .filter(|&(i, j)| (t.apply_point(&source[i]) - target[j]).norm_squared() <= thr_sq)
        .collect()
}

fn count_inliers(source: &[Point3<f64>], target: &[Point3<f64>], pairs: &[(usize, usize)], t: &RigidTransform, thr_sq: f64) -> usize {
    pairs
        .iter()
        .filter(|&&(i, j)| (t.apply_point(&source[i]) - target[j]).norm_squared() <= thr_sq)
        .count()
}

fn rmse_over(source: &[Point3<f64>], target: &[Point3<f64>], pairs: &[(usize, usize)], t: &RigidTransform) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sum: f64 = pairs
        .iter()
        .map(|&(i, j)| (t.apply_point(&source[i]) - target[j]).norm_squared())
        .sum();
    (sum / pairs.len() as f64).sqrt()
}

/// Outcome of the RANSAC hypothesis loop, before the final refit.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSearch {
    /// Largest consensus found by any 3-sample hypothesis.
    pub best_count: usize,
    pub best_transform: Option<RigidTransform>,
    pub hypotheses: usize,
    /// All 3-subsets were enumerated because the budget covered them.
    pub exhaustive: bool,
}

fn choose3(n: usize) -> u128 {
    let n = n as u128;
    if n < 3 {
        0
    } else {
        n * (n - 1) * (n - 2) / 6
    }
}

/// The RANSAC hypothesis loop. When the iteration budget is at least the
/// number of 3-subsets, every subset is evaluated once in lexicographic order;
/// otherwise subsets are drawn from a generator seeded with `params.seed`.
/// Ties keep the first hypothesis reaching the count.
pub fn search_ransac_hypotheses(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    corr: &CorrespondenceSet,
    params: &RegistrationParams,
) -> Result<HypothesisSearch, RegisterError> {
    let pairs = corr.pairs();
    let n = pairs.len();
    if n < 3 {
        return Err(RegisterError::TooFewMatches(n));
    }
    let thr_sq = params.inlier_threshold * params.inlier_threshold;
    let mut search = HypothesisSearch {
        best_count: 0,
        best_transform: None,
        hypotheses: 0,
        exhaustive: choose3(n) <= params.ransac_iterations as u128,
    };
    let evaluate = |a: usize, b: usize, c: usize, search: &mut HypothesisSearch| -> bool {
        search.hypotheses += 1;
        let triple = [pairs[a], pairs[b], pairs[c]];
        let Ok(t) = fit_rigid(triple.iter().map(|&(i, j)| (&source[i], &target[j]))) else {
            return false;
        };
        let count = count_inliers(source, target, pairs, &t, thr_sq);
        if count > search.best_count {
            search.best_count = count;
            search.best_transform = Some(t);
        }
        search.best_count == n
    };

    if search.exhaustive {
        'outer: for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    if evaluate(a, b, c, &mut search) {
                        break 'outer;
                    }
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for _ in 0..params.ransac_iterations {
            let s = rand::seq::index::sample(&mut rng, n, 3);
            if evaluate(s.index(0), s.index(1), s.index(2), &mut search) {
                break;
            }
        }
    }
    Ok(search)
}

fn ransac(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    corr: &CorrespondenceSet,
    params: &RegistrationParams,
) -> Result<(RigidTransform, usize), RegisterError> {
    let search = search_ransac_hypotheses(source, target, corr, params)?;
    match search.best_transform {
        Some(t) if search.best_count >= 3 => Ok((t, search.hypotheses)),
        _ => Err(RegisterError::NoConsensus),
    }
}

/// Fixed-size bitset rows of the consistency graph.
struct BitGraph {
    words: usize,
    bits: Vec<u64>,
}

impl BitGraph {
    fn new(n: usize) -> Self {
        let words = n.div_ceil(64);
        Self {
            words,
            bits: vec![0; words * n],
        }
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    fn set(&mut self, i: usize, k: usize) {
        self.bits[i * self.words + k / 64] |= 1 << (k % 64);
    }

    fn has(row: &[u64], k: usize) -> bool {
        row[k / 64] & (1 << (k % 64)) != 0
    }
}

/// Seeds tried by the greedy clique search, highest degree first.
const CLIQUE_SEEDS: usize = 64;

fn clique(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    corr: &CorrespondenceSet,
    params: &RegistrationParams,
) -> Result<(RigidTransform, usize), RegisterError> {
    let pairs = corr.pairs();
    let n = pairs.len();
    let tol = 2.0 * params.inlier_threshold;
    let mut graph = BitGraph::new(n);
    let mut degree = vec![0usize; n];
    for a in 0..n {
        let (xa, ya) = (&source[pairs[a].0], &target[pairs[a].1]);
        for b in a + 1..n {
            let (xb, yb) = (&source[pairs[b].0], &target[pairs[b].1]);
            if ((xa - xb).norm() - (ya - yb).norm()).abs() <= tol {
                graph.set(a, b);
                graph.set(b, a);
                degree[a] += 1;
                degree[b] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| degree[b].cmp(&degree[a]).then(a.cmp(&b)));

    let mut best: Vec<usize> = Vec::new();
    let mut candidates = vec![0u64; graph.words];
    for &seed in order.iter().take(CLIQUE_SEEDS) {
        if degree[seed] < best.len() {
            break;
        }
        candidates.copy_from_slice(graph.row(seed));
        let mut members = vec![seed];
        for &c in &order {
            if BitGraph::has(&candidates, c) {
                members.push(c);
                for (w, r) in candidates.iter_mut().zip(graph.row(c)) {
                    *w &= r;
                }
            }
        }
        if members.len() > best.len() {
            best = members;
        }
    }
    if best.len() < 3 {
        return Err(RegisterError::NoConsensus);
    }
    let t = fit_rigid(best.iter().map(|&k| (&source[pairs[k].0], &target[pairs[k].1])))
        .map_err(|_| RegisterError::NoConsensus)?;
    Ok((t, 1))
}

/// Robust transform from putative correspondences. The hypothesis with the
/// largest consensus is refit on its inliers; the refit is kept when it does
/// not lose inliers.
pub fn robust_estimate(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    corr: &CorrespondenceSet,
    method: RobustMethod,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegisterError> {
    if corr.len() < 3 {
        return Err(RegisterError::TooFewMatches(corr.len()));
    }
    let (hypothesis, iterations) = match method {
        RobustMethod::Ransac => ransac(source, target, corr, params)?,
        RobustMethod::Clique => clique(source, target, corr, params)?,
    };
    let thr = params.inlier_threshold;
    let mut transform = hypothesis;
    let mut inliers = inliers_under(source, target, corr, &hypothesis, thr);
    if inliers.len() >= 3 {
        if let Ok(refit) = fit_rigid(inliers.iter().map(|&(i, j)| (&source[i], &target[j]))) {
            let refit_inliers = inliers_under(source, target, corr, &refit, thr);
            if refit_inliers.len() >= inliers.len() {
                transform = refit;
                inliers = refit_inliers;
            }
        }
    }
    if inliers.len() < 3 {
        return Err(RegisterError::NoConsensus);
    }
    let rmse = rmse_over(source, target, &inliers, &transform);
    Ok(RegistrationResult {
        transform,
        inliers: CorrespondenceSet::from_trusted(inliers),
        rmse,
        converged: true,
        iterations,
        rmse_history: Vec::new(),
        timings: StageTimings::default(),
    })
}

/// ICP restricted to the neighbourhood of the coarse inlier matches.
///
/// `coarse.inliers` index `coarse_source` / `coarse_target` (the points the
/// robust estimate was computed on), which may differ from the clouds being
/// refined. The refinement region is every point within `refinement_radius`
/// of a match midpoint, both sides expressed in the target frame. If the
/// refined RMSE exceeds the coarse one the coarse result is returned.
#[allow(clippy::too_many_arguments)]
pub fn refine_prepared(
    coarse_source: &[Point3<f64>],
    coarse_target: &[Point3<f64>],
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    coarse: &RegistrationResult,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegisterError> {
    if coarse.inliers.len() < 3 {
        return Err(RegisterError::TooFewMatches(coarse.inliers.len()));
    }
    let t = &coarse.transform;
    let centers: Vec<Point3<f64>> = coarse
        .inliers
        .pairs()
        .iter()
        .map(|&(i, j)| nalgebra::center(&t.apply_point(&coarse_source[i]), &coarse_target[j]))
        .collect();
    let center_index = SpatialIndex::new(&centers);
    let radius = params.refinement_radius;

    let src_keep: Vec<usize> = (0..source.len())
        .filter(|&i| center_index.any_within(&t.apply_point(&source[i]), radius))
        .collect();
    let tgt_keep: Vec<usize> = (0..target.len())
        .filter(|&j| center_index.any_within(&target[j], radius))
        .collect();
    if src_keep.is_empty() || tgt_keep.is_empty() {
        return Err(RegisterError::NoMatchesInRange);
    }
    let src_sub: Vec<Point3<f64>> = src_keep.iter().map(|&i| source[i]).collect();
    let tgt_sub: Vec<Point3<f64>> = tgt_keep.iter().map(|&j| target[j]).collect();
    let tgt_index = SpatialIndex::new(&tgt_sub);
    let mut refined = icp_indexed(&src_sub, &tgt_sub, &tgt_index, t, params)?;

    if refined.rmse > coarse.rmse + 1e-9 {
        return Ok(coarse.clone());
    }
    let mapped = refined
        .inliers
        .pairs()
        .iter()
        .map(|&(a, b)| (src_keep[a], tgt_keep[b]))
        .collect();
    refined.inliers = CorrespondenceSet::from_trusted(mapped);
    Ok(refined)
}

/// [`refine_prepared`] where the coarse inliers index `source` and `target`
/// themselves.
pub fn refine_icp(
    source: &PointCloud,
    target: &PointCloud,
    coarse: &RegistrationResult,
    params: &RegistrationParams,
) -> Result<RegistrationResult, RegisterError> {
    refine_prepared(source.points(), target.points(), source.points(), target.points(), coarse, params)
}
