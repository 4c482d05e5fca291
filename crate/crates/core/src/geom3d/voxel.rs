use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::{Geom3dError, PointCloud};

/// Replaces the points in each occupied voxel by their centroid. Normals are
/// averaged and renormalized. Output order follows the first point seen in
/// each voxel.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud, Geom3dError> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Geom3dError::NonPositiveVoxel(voxel));
    }
    if cloud.is_empty() {
        return Err(Geom3dError::EmptyCloud);
    }
    let inv = 1.0 / voxel;
    let has_normals = !cloud.normals().is_empty();

    struct Cell {
        sum: Vector3<f64>,
        normal: Vector3<f64>,
        first_normal: Vector3<f64>,
        count: usize,
    }

    let mut slots: HashMap<(i64, i64, i64), usize> = HashMap::with_capacity(cloud.len());
    let mut cells: Vec<Cell> = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let key = (
            (p.x * inv).floor() as i64,
            (p.y * inv).floor() as i64,
            (p.z * inv).floor() as i64,
        );
        let n = if has_normals { cloud.normals()[i] } else { Vector3::zeros() };
        let slot = *slots.entry(key).or_insert_with(|| {
            cells.push(Cell {
                sum: Vector3::zeros(),
                normal: Vector3::zeros(),
                first_normal: n,
                count: 0,
            });
            cells.len() - 1
        });
        let cell = &mut cells[slot];
        cell.sum += p.coords;
        cell.normal += n;
        cell.count += 1;
    }

    let mut points = Vec::with_capacity(cells.len());
    let mut normals = Vec::with_capacity(if has_normals { cells.len() } else { 0 });
    for cell in &cells {
        points.push(Point3::from(cell.sum / cell.count as f64));
        if has_normals {
            let len = cell.normal.norm();
            // Opposing normals can cancel; fall back to the first member.
            normals.push(if len > 1e-12 { cell.normal / len } else { cell.first_normal });
        }
    }
    PointCloud::new(cloud.id(), points, normals)
}
