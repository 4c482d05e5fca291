use nalgebra::{Point3, Vector3};

use super::{Geom3dError, RigidTransform};

/// Maximum deviation of a stored normal from unit length.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// One coin-face scan: positions in millimetres plus unit normals.
///
/// `normals` is either empty (the source file carried none) or has exactly one
/// entry per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    id: String,
    points: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(
        id: impl Into<String>,
        points: Vec<Point3<f64>>,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self, Geom3dError> {
        if !normals.is_empty() && normals.len() != points.len() {
            return Err(Geom3dError::LengthMismatch {
                points: points.len(),
                normals: normals.len(),
            });
        }
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|v| v.is_finite())) {
            return Err(Geom3dError::NonFinite(i));
        }
        if let Some(i) = normals
            .iter()
            .position(|n| !n.iter().all(|v| v.is_finite()) || (n.norm() - 1.0).abs() > NORMAL_TOLERANCE)
        {
            return Err(Geom3dError::NotUnitNormal(i));
        }
        Ok(Self {
            id: id.into(),
            points,
            normals,
        })
    }

    /// Like [`PointCloud::new`] but normalizes every normal first. Zero-length
    /// normals are rejected.
    pub fn with_normalized_normals(
        id: impl Into<String>,
        points: Vec<Point3<f64>>,
        mut normals: Vec<Vector3<f64>>,
    ) -> Result<Self, Geom3dError> {
        for (i, n) in normals.iter_mut().enumerate() {
            let len = n.norm();
            if !(len.is_finite() && len > 0.0) {
                return Err(Geom3dError::NotUnitNormal(i));
            }
            *n /= len;
        }
        Self::new(id, points, normals)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn set_id(&mut self, id: impl Into<String>) {
        self.id = id.into();
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn has_normals(&self) -> bool {
        !self.normals.is_empty() || self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        centroid(&self.points)
    }

    /// Applies `t` to every point and rotates every normal.
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            id: self.id.clone(),
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            normals: self.normals.iter().map(|n| t.apply_vector(n)).collect(),
        }
    }

    /// Sub-cloud made of the points at `indices`, in that order.
    pub fn filter_indices(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            id: self.id.clone(),
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: if self.normals.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.normals[i]).collect()
            },
        }
    }
}

/// `apply_transform` from the operations list.
pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    cloud.transformed(t)
}

pub fn centroid(points: &[Point3<f64>]) -> Option<Point3<f64>> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Some(Point3::from(sum / points.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn validates_invariants() {
        let p = vec![Point3::origin(); 2];
        assert!(matches!(
            PointCloud::new("a", p.clone(), vec![Vector3::z()]),
            Err(Geom3dError::LengthMismatch { .. })
        ));
        assert!(matches!(
            PointCloud::new("a", p.clone(), vec![Vector3::z(), Vector3::new(0.0, 0.0, 2.0)]),
            Err(Geom3dError::NotUnitNormal(1))
        ));
        assert!(matches!(
            PointCloud::new("a", vec![Point3::new(f64::NAN, 0.0, 0.0)], vec![]),
            Err(Geom3dError::NonFinite(0))
        ));
        let c = PointCloud::with_normalized_normals("a", p, vec![Vector3::new(0.0, 3.0, 0.0); 2]).unwrap();
        assert_eq!(c.normals()[0], Vector3::y());
    }

    #[test]
    fn transform_rotates_normals_without_translation() {
        let c = PointCloud::new("a", vec![Point3::new(1.0, 0.0, 0.0)], vec![Vector3::x()]).unwrap();
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let t = RigidTransform::from_rotation(rot, Vector3::new(0.0, 0.0, 5.0));
        let out = apply_transform(&c, &t);
        assert!((out.points()[0] - Point3::new(0.0, 1.0, 5.0)).norm() < 1e-15);
        assert!((out.normals()[0] - Vector3::y()).norm() < 1e-15);
        assert_eq!(apply_transform(&c, &RigidTransform::identity()), c);
    }
}
