use nalgebra::{Matrix3, Point3, Vector3};

use super::{CorrespondenceSet, RegisterError};
use crate::geom3d::RigidTransform;

/// Relative singular-value floor below which the cross-covariance is treated
/// as rank deficient.
const RANK_EPS: f64 = 1e-10;

/// Least-squares rigid transform mapping `source[i]` onto `target[j]` for
/// every `(i, j)` in `corr`.
pub fn kabsch(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    corr: &CorrespondenceSet,
) -> Result<RigidTransform, RegisterError> {
    fit_rigid(corr.pairs().iter().map(|&(i, j)| (&source[i], &target[j])))
}

/// Kabsch over explicit point pairs.
pub fn fit_rigid<'a, I>(pairs: I) -> Result<RigidTransform, RegisterError>
where
    I: Iterator<Item = (&'a Point3<f64>, &'a Point3<f64>)> + Clone,
{
    let mut n = 0usize;
    let mut cx = Vector3::zeros();
    let mut cy = Vector3::zeros();
    for (x, y) in pairs.clone() {
        cx += x.coords;
        cy += y.coords;
        n += 1;
    }
    if n < 3 {
        return Err(RegisterError::TooFewMatches(n));
    }
    cx /= n as f64;
    cy /= n as f64;
    let mut h = Matrix3::zeros();
    for (x, y) in pairs {
        h += (x.coords - cx) * (y.coords - cy).transpose();
    }
    let svd = h.svd(true, true);
    let s = svd.singular_values;
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= RANK_EPS * sorted[0] {
        return Err(RegisterError::DegenerateConfiguration);
    }
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(RegisterError::DegenerateConfiguration),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    // Singular values are not guaranteed sorted, so the reflection fix flips
    // the direction of the smallest one.
    let smallest = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap_or(2);
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    diag[smallest] = d;
    let r = v * Matrix3::from_diagonal(&diag) * u.transpose();
    let t = cy - r * cx;
    Ok(RigidTransform::from_rotation_unchecked(r, t))
}

/// Sum of squared residuals `Σ ‖R x + t − y‖²`.
pub fn squared_error(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    corr: &CorrespondenceSet,
    t: &RigidTransform,
) -> f64 {
    corr.pairs()
        .iter()
        .map(|&(i, j)| (t.apply_point(&source[i]) - target[j]).norm_squared())
        .sum()
}
