//! Geometric primitives: point clouds, rigid transforms, PLY I/O, voxel
//! downsampling and an exact nearest-neighbour index.
//!
//! All lengths are millimetres.

mod cloud;
mod kdtree;
mod ply;
mod transform;
mod voxel;

pub use cloud::{apply_transform, centroid, PointCloud, NORMAL_TOLERANCE};
pub use kdtree::SpatialIndex;
pub use ply::{load_point_cloud, read_point_cloud, save_point_cloud, write_point_cloud, PlyFormat};
pub use transform::{
    compose, euler_xyz_intrinsic, invert, random_rotation, AngleRange, RigidTransform, RotationRanges,
    ROTATION_TOLERANCE,
};
pub use voxel::voxel_downsample;

#[derive(Debug, thiserror::Error)]
pub enum Geom3dError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("PLY file has no nx/ny/nz vertex properties")]
    MissingNormals,
    #[error("malformed PLY: {0}")]
    MalformedPly(String),
    #[error("unsupported PLY format: {0}")]
    UnsupportedPly(String),
    #[error("voxel size must be positive, got {0}")]
    NonPositiveVoxel(f64),
    #[error("{points} points but {normals} normals")]
    LengthMismatch { points: usize, normals: usize },
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("normal {0} is not unit length")]
    NotUnitNormal(usize),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid {axis} angle range [{min}, {max}]")]
    InvalidRange { axis: &'static str, min: f64, max: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
