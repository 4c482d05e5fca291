//! Fast point feature histograms.
//!
//! For a point `p` and each neighbour `q` within the feature radius, the
//! Darboux-frame angles (θ, α, φ) of the pair are binned into three 11-bin
//! histograms (the simplified point feature histogram, SPFH). The FPFH of
//! `p` is its own SPFH plus the inverse-squared-distance weighted sum of its
//! neighbours' SPFHs, each sub-histogram renormalized to 100.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};

use super::{DescriptorField, RegisterError};
use crate::geom3d::{PointCloud, SpatialIndex};

pub const FPFH_BINS: usize = 11;
pub const FPFH_DIM: usize = 3 * FPFH_BINS;

/// Pair features `(theta, alpha, phi)`, or `None` for coincident points or a
/// degenerate frame.
fn pair_features(p1: &Point3<f64>, n1: &Vector3<f64>, p2: &Point3<f64>, n2: &Vector3<f64>) -> Option<(f64, f64, f64)> {
    let mut d = p2 - p1;
    let dist = d.norm();
    if dist == 0.0 {
        return None;
    }
    let angle1 = n1.dot(&d) / dist;
    let angle2 = n2.dot(&d) / dist;
    // The source of the frame is the point whose normal makes the smaller
    // angle with the connecting line.
    let (u, other, phi) = if angle1.abs().acos() > angle2.abs().acos() {
        d = -d;
        (n2, n1, -angle2)
    } else {
        (n1, n2, angle1)
    };
    let v = d.cross(u);
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return None;
    }
    let v = v / v_norm;
    let w = u.cross(&v);
    let alpha = v.dot(other);
    let theta = w.dot(other).atan2(u.dot(other));
    Some((theta, alpha, phi))
}

#[inline]
fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let idx = (FPFH_BINS as f64 * (value - lo) / (hi - lo)).floor();
    idx.clamp(0.0, (FPFH_BINS - 1) as f64) as usize
}

fn spfh(
    points: &[Point3<f64>],
    normals: &[Vector3<f64>],
    i: usize,
    neighbours: &[(usize, f64)],
    out: &mut [f64],
) {
    out.fill(0.0);
    let k = neighbours.iter().filter(|&&(j, _)| j != i).count();
    if k == 0 {
        return;
    }
    let incr = 100.0 / k as f64;
    for &(j, _) in neighbours {
        if j == i {
            continue;
        }
        if let Some((theta, alpha, phi)) = pair_features(&points[i], &normals[i], &points[j], &normals[j]) {
            out[bin(theta, -PI, PI)] += incr;
            out[FPFH_BINS + bin(alpha, -1.0, 1.0)] += incr;
            out[2 * FPFH_BINS + bin(phi, -1.0, 1.0)] += incr;
        }
    }
}

/// 33-dimensional FPFH for every point of `cloud`.
///
/// Points with no neighbour inside `feature_radius` get an all-zero
/// descriptor and are listed in [`DescriptorField::isolated`].
pub fn compute_fpfh(cloud: &PointCloud, feature_radius: f64) -> Result<DescriptorField, RegisterError> {
    if !(feature_radius > 0.0 && feature_radius.is_finite()) {
        return Err(RegisterError::InvalidParameter(format!(
            "feature_radius must be positive, got {feature_radius}"
        )));
    }
    if cloud.is_empty() {
        return Err(crate::geom3d::Geom3dError::EmptyCloud.into());
    }
    if cloud.normals().is_empty() {
        return Err(crate::geom3d::Geom3dError::MissingNormals.into());
    }
    let points = cloud.points();
    let normals = cloud.normals();
    let n = points.len();
    let index = SpatialIndex::new(points);

    let mut spfhs = vec![0.0; n * FPFH_DIM];
    let mut neighbours = Vec::new();
    let mut isolated = Vec::new();
    for i in 0..n {
        index.within_radius_into(&points[i], feature_radius, &mut neighbours);
        spfh(points, normals, i, &neighbours, &mut spfhs[i * FPFH_DIM..(i + 1) * FPFH_DIM]);
        if !neighbours.iter().any(|&(j, _)| j != i) {
            isolated.push(i);
        }
    }

    let mut data = vec![0.0; n * FPFH_DIM];
    let mut acc = [0.0; FPFH_DIM];
    for i in 0..n {
        index.within_radius_into(&points[i], feature_radius, &mut neighbours);
        acc.fill(0.0);
        for &(j, d2) in &neighbours {
            if j == i || d2 == 0.0 {
                continue;
            }
            let w = 1.0 / d2;
            for (a, s) in acc.iter_mut().zip(&spfhs[j * FPFH_DIM..(j + 1) * FPFH_DIM]) {
                *a += w * s;
            }
        }
        for part in 0..3 {
            let range = part * FPFH_BINS..(part + 1) * FPFH_BINS;
            let sum: f64 = acc[range.clone()].iter().sum();
            let scale = if sum > 0.0 { 100.0 / sum } else { 0.0 };
            for k in range {
                data[i * FPFH_DIM + k] = spfhs[i * FPFH_DIM + k] + scale * acc[k];
            }
        }
    }

    Ok(DescriptorField::from_parts(FPFH_DIM, data, (0..n).collect(), isolated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom3d::RigidTransform;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wavy_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut normals = Vec::new();
        for _ in 0..n {
            let x: f64 = rng.random_range(-2.0..2.0);
            let y: f64 = rng.random_range(-2.0..2.0);
            let z = 0.2 * (2.0 * x).sin() + 0.15 * (3.0 * y).cos();
            let gx = 0.4 * (2.0 * x).cos();
            let gy = -0.45 * (3.0 * y).sin();
            pts.push(Point3::new(x, y, z));
            normals.push(Vector3::new(-gx, -gy, 1.0).normalize());
        }
        PointCloud::new("w", pts, normals).unwrap()
    }

    #[test]
    fn plane_gives_identical_descriptors() {
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push(Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        let normals = vec![Vector3::z(); pts.len()];
        let cloud = PointCloud::new("plane", pts, normals).unwrap();
        let field = compute_fpfh(&cloud, 0.35).unwrap();
        let first = field.descriptor(0).to_vec();
        for k in 0..field.len() {
            for (a, b) in field.descriptor(k).iter().zip(&first) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invariant_under_rigid_motion() {
        let cloud = wavy_cloud(5, 1500);
        let t = RigidTransform::from_rotation(
            Rotation3::from_euler_angles(0.4, -0.3, 2.1),
            Vector3::new(3.0, -1.0, 7.0),
        );
        let a = compute_fpfh(&cloud, 0.4).unwrap();
        let b = compute_fpfh(&cloud.transformed(&t), 0.4).unwrap();
        for k in 0..a.len() {
            for (x, y) in a.descriptor(k).iter().zip(b.descriptor(k)) {
                assert!((x - y).abs() < 1e-6, "point {k}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn isolated_point_is_zero_and_flagged() {
        let pts = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(0.1, 0.0, 0.0), Point3::new(10.0, 0.0, 0.0)];
        let cloud = PointCloud::new("iso", pts, vec![Vector3::z(); 3]).unwrap();
        let field = compute_fpfh(&cloud, 0.5).unwrap();
        assert_eq!(field.isolated(), &[2]);
        assert!(field.descriptor(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn each_spfh_part_sums_to_100() {
        let cloud = wavy_cloud(6, 400);
        let field = compute_fpfh(&cloud, 0.5).unwrap();
        for k in 0..field.len() {
            if field.isolated().contains(&k) {
                continue;
            }
            for part in 0..3 {
                let s: f64 = field.descriptor(k)[part * FPFH_BINS..(part + 1) * FPFH_BINS].iter().sum();
                assert!((s - 200.0).abs() < 1e-6 || (s - 100.0).abs() < 1e-6, "sum {s}");
            }
        }
    }
}
