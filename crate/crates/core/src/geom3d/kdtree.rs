//! Exact nearest-neighbour index over a fixed 3D point set.
//!
//! A static kd-tree with small leaf buckets. Splits are on the axis of largest
//! extent at the median. Queries are exact; when several points are at the
//! same distance the lowest original index wins.

use nalgebra::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Immutable kd-tree. Safe to query from many threads at once.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    nodes: Vec<Node>,
    /// Points reordered into leaf order.
    coords: Vec<[f64; 3]>,
    /// Original index for each entry of `coords`.
    order: Vec<usize>,
}

impl SpatialIndex {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            build(points, &mut order, 0, &mut nodes);
        }
        let coords = order
            .iter()
            .map(|&i| [points[i].x, points[i].y, points[i].z])
            .collect();
        Self {
            nodes,
            coords,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Index and squared distance of the nearest point, `None` on an empty
    /// index.
    pub fn nearest_sq(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let q = [q.x, q.y, q.z];
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, &q, &mut best);
        Some(best)
    }

    /// Index and Euclidean distance of the nearest point.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        self.nearest_sq(q).map(|(i, d2)| (i, d2.sqrt()))
    }

    fn nearest_rec(&self, node: usize, q: &[f64; 3], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start..end {
                    let d2 = dist_sq(&self.coords[k], q);
                    let idx = self.order[k];
                    if d2 < best.1 || (d2 == best.1 && idx < best.0) {
                        *best = (idx, d2);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                // `<=` keeps equidistant candidates reachable for the index tie-break.
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// All points with distance `<= radius`, as `(index, squared distance)`
    /// sorted by index.
    pub fn within_radius(&self, q: &Point3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.within_radius_into(q, radius, &mut out);
        out
    }

    /// Buffer-reusing variant of [`SpatialIndex::within_radius`].
    pub fn within_radius_into(&self, q: &Point3<f64>, radius: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        if self.nodes.is_empty() || radius < 0.0 {
            return;
        }
        let q = [q.x, q.y, q.z];
        self.radius_rec(0, &q, radius * radius, out);
        out.sort_unstable_by_key(|&(i, _)| i);
    }

    fn radius_rec(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start..end {
                    let d2 = dist_sq(&self.coords[k], q);
                    if d2 <= r2 {
                        out.push((self.order[k], d2));
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.radius_rec(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius_rec(right, q, r2, out);
                }
            }
        }
    }

    /// True if any point lies within `radius` of `q`.
    pub fn any_within(&self, q: &Point3<f64>, radius: f64) -> bool {
        self.nearest_sq(q).is_some_and(|(_, d2)| d2 <= radius * radius)
    }
}

#[inline]
fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn build(points: &[Point3<f64>], order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        for d in 0..3 {
            lo[d] = lo[d].min(points[i][d]);
            hi[d] = hi[d].max(points[i][d]);
        }
    }
    let dim = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[dim] - lo[dim] == 0.0 {
        // All points coincide; no split can separate them.
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][dim].total_cmp(&points[b][dim]));
    let value = points[order[mid]][dim];
    nodes.push(Node::Split {
        dim,
        value,
        left: 0,
        right: 0,
    });
    let (left_part, right_part) = order.split_at_mut(mid);
    let left = build(points, left_part, offset, nodes);
    let right = build(points, right_part, offset + mid, nodes);
    nodes[id] = Node::Split {
        dim,
        value,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(points: &[Point3<f64>], q: &Point3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..40 {
            let n = 1 + trial * 12;
            let pts: Vec<Point3<f64>> = (0..n)
                .map(|_| Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-0.3..0.3)))
                .collect();
            let index = SpatialIndex::new(&pts);
            for _ in 0..50 {
                let q = Point3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-1.0..1.0));
                assert_eq!(index.nearest_sq(&q).unwrap(), brute_nearest(&pts, &q));
                let r = rng.random_range(0.0..2.0);
                let expect: Vec<(usize, f64)> = pts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, (p - q).norm_squared()))
                    .filter(|&(_, d2)| d2 <= r * r)
                    .collect();
                assert_eq!(index.within_radius(&q, r), expect);
            }
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        // Grid points: many exact ties.
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Point3::new(i as f64, j as f64, 0.0));
            }
        }
        pts.push(Point3::new(3.0, 3.0, 0.0));
        pts.insert(0, Point3::new(5.0, 5.0, 0.0));
        let index = SpatialIndex::new(&pts);
        for q in [Point3::new(3.5, 3.5, 0.0), Point3::new(5.0, 5.0, 0.0), Point3::new(3.0, 3.0, 0.0)] {
            assert_eq!(index.nearest_sq(&q).unwrap(), brute_nearest(&pts, &q));
        }
        let dup = vec![Point3::new(1.0, 1.0, 1.0); 40];
        assert_eq!(SpatialIndex::new(&dup).nearest_sq(&Point3::origin()).unwrap().0, 0);
    }

    #[test]
    fn empty_index() {
        let index = SpatialIndex::new(&[]);
        assert!(index.nearest(&Point3::origin()).is_none());
        assert!(index.within_radius(&Point3::origin(), 1.0).is_empty());
    }
}
