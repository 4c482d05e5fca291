//! Rigid transforms in millimetre space.

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Geom3dError;

/// Tolerance used when validating that a matrix is a proper rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// A proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = t.rotation;
        Self {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Geom3dError;

    fn try_from(repr: TransformRepr) -> Result<Self, Self::Error> {
        let r = repr.rotation;
        let rotation = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        RigidTransform::new(rotation, Vector3::from(repr.translation))
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, checking orthonormality and `det = +1`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, Geom3dError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Geom3dError::InvalidRotation("non-finite entry".into()));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let worst = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if worst > ROTATION_TOLERANCE {
            return Err(Geom3dError::InvalidRotation(format!(
                "R^T R deviates from identity by {worst:e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Geom3dError::InvalidRotation(format!("det(R) = {det}")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a transform from a rotation that is known to be proper
    /// (e.g. the output of an SVD with reflection correction). The rotation is
    /// re-orthonormalized to absorb round-off.
    pub(crate) fn from_rotation_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_matrix_eps(&rotation, 1e-15, 64, Rotation3::identity())
            .into_inner();
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation `rotation` applied about `center` instead of the origin.
    pub fn rotation_about(rotation: &Rotation3<f64>, center: &Point3<f64>) -> Self {
        let c = center.coords;
        Self {
            rotation: *rotation.matrix(),
            translation: c - rotation * c,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self` after `first`: the result applies `first`, then `self`.
    pub fn after(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle of `R` in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let cos = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos()
    }

    /// Homogeneous 4x4 matrix.
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Inverse of [`RigidTransform::to_row_major`]; the bottom row must be
    /// `0 0 0 1`.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self, Geom3dError> {
        if m[12..] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Geom3dError::InvalidRotation("bottom row is not 0 0 0 1".into()));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }
}

/// Composition `t2 ∘ t1`: apply `t1` first, then `t2`.
pub fn compose(t2: &RigidTransform, t1: &RigidTransform) -> RigidTransform {
    t2.after(t1)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Closed interval of Euler angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub min_deg: f64,
    pub max_deg: f64,
}

impl AngleRange {
    pub const fn new(min_deg: f64, max_deg: f64) -> Self {
        Self { min_deg, max_deg }
    }

    pub const fn symmetric(half_width_deg: f64) -> Self {
        Self::new(-half_width_deg, half_width_deg)
    }

    fn validate(&self, axis: &'static str) -> Result<(), Geom3dError> {
        if !self.min_deg.is_finite() || !self.max_deg.is_finite() || self.min_deg > self.max_deg {
            return Err(Geom3dError::InvalidRange {
                axis,
                min: self.min_deg,
                max: self.max_deg,
            });
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min_deg == self.max_deg {
            self.min_deg
        } else {
            rng.random_range(self.min_deg..=self.max_deg)
        }
    }
}

/// Per-axis Euler angle ranges for random rotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationRanges {
    pub x: AngleRange,
    pub y: AngleRange,
    pub z: AngleRange,
}

impl RotationRanges {
    /// The registration benchmark perturbation: ±25° about x and y, a full
    /// turn about z.
    pub const BENCHMARK: RotationRanges = RotationRanges {
        x: AngleRange::symmetric(25.0),
        y: AngleRange::symmetric(25.0),
        z: AngleRange::symmetric(180.0),
    };

    pub const NONE: RotationRanges = RotationRanges {
        x: AngleRange::new(0.0, 0.0),
        y: AngleRange::new(0.0, 0.0),
        z: AngleRange::new(0.0, 0.0),
    };

    pub fn validate(&self) -> Result<(), Geom3dError> {
        self.x.validate("x")?;
        self.y.validate("y")?;
        self.z.validate("z")
    }

    /// Draws Euler angles (degrees) uniformly per axis and returns the
    /// intrinsic X→Y→Z rotation, i.e. `Rx(a) · Ry(b) · Rz(c)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Rotation3<f64>, [f64; 3]) {
        let a = self.x.sample(rng);
        let b = self.y.sample(rng);
        let c = self.z.sample(rng);
        (euler_xyz_intrinsic(a, b, c), [a, b, c])
    }
}

/// Intrinsic X→Y→Z rotation from angles in degrees.
pub fn euler_xyz_intrinsic(x_deg: f64, y_deg: f64, z_deg: f64) -> Rotation3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), x_deg.to_radians());
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), y_deg.to_radians());
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), z_deg.to_radians());
    rx * ry * rz
}

/// Seeded random rotation (zero translation) with per-axis Euler ranges in
/// degrees.
pub fn random_rotation(
    x_range: AngleRange,
    y_range: AngleRange,
    z_range: AngleRange,
    seed: u64,
) -> Result<RigidTransform, Geom3dError> {
    let ranges = RotationRanges {
        x: x_range,
        y: y_range,
        z: z_range,
    };
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rot, _) = ranges.sample(&mut rng);
    Ok(RigidTransform::from_rotation(rot, Vector3::zeros()))
}
