//! Per-point descriptor fields and mutual nearest-neighbour matching.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorrespondenceSet, RegisterError};
use crate::geom3d::PointCloud;

/// Fixed-dimension descriptors attached to a subset of a cloud's points.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    dimension: usize,
    /// Row-major, `len() * dimension` values.
    data: Vec<f64>,
    sample_indices: Vec<usize>,
    isolated: Vec<usize>,
}

impl DescriptorField {
    /// Validated constructor: one row per sample index, unique indices, finite
    /// values.
    pub fn new(dimension: usize, rows: Vec<Vec<f64>>, sample_indices: Vec<usize>) -> Result<Self, RegisterError> {
        if dimension == 0 {
            return Err(RegisterError::DimensionMismatch("dimension must be positive".into()));
        }
        if rows.len() != sample_indices.len() {
            return Err(RegisterError::DimensionMismatch(format!(
                "{} rows but {} sample indices",
                rows.len(),
                sample_indices.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &i in &sample_indices {
            if !seen.insert(i) {
                return Err(RegisterError::MalformedDescriptors(format!("duplicate sample index {i}")));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * dimension);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dimension {
                return Err(RegisterError::DimensionMismatch(format!(
                    "row {r} has {} values, expected {dimension}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(RegisterError::NonFiniteValue(r));
            }
            data.extend_from_slice(row);
        }
        Ok(Self::from_parts(dimension, data, sample_indices, Vec::new()))
    }

    pub(crate) fn from_parts(dimension: usize, data: Vec<f64>, sample_indices: Vec<usize>, isolated: Vec<usize>) -> Self {
        debug_assert_eq!(data.len(), dimension * sample_indices.len());
        Self {
            dimension,
            data,
            sample_indices,
            isolated,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }

    /// Descriptor of the `k`-th sample.
    pub fn descriptor(&self, k: usize) -> &[f64] {
        &self.data[k * self.dimension..(k + 1) * self.dimension]
    }

    /// Cloud index of each sample.
    pub fn sample_indices(&self) -> &[usize] {
        &self.sample_indices
    }

    /// Samples whose descriptor could not be computed (no neighbours) and was
    /// set to zero.
    pub fn isolated(&self) -> &[usize] {
        &self.isolated
    }

    /// Stable content hash used to seed per-field sampling, so that the two
    /// sides of a match draw the same samples regardless of argument order.
    fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.dimension as u64);
        feed(self.sample_indices.len() as u64);
        for &i in &self.sample_indices {
            feed(i as u64);
        }
        for v in &self.data {
            feed(v.to_bits());
        }
        h
    }

    /// Sorted positions (into this field) of `min(n, len)` samples drawn
    /// uniformly without replacement.
    fn sample_positions(&self, n: usize, seed: u64) -> Vec<usize> {
        if n >= self.len() {
            return (0..self.len()).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ self.digest());
        let mut picked = rand::seq::index::sample(&mut rng, self.len(), n).into_vec();
        picked.sort_unstable();
        picked
    }
}

/// Parses the textual descriptor format: a header `dim=<d> count=<k>` then `k`
/// rows of `<point_index> <d values>`.
pub fn parse_external_descriptors(text: &str, cloud_len: usize) -> Result<DescriptorField, RegisterError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| RegisterError::MalformedDescriptors("empty file".into()))?;
    let mut dim = None;
    let mut count = None;
    for token in header.split_whitespace() {
        if let Some(v) = token.strip_prefix("dim=") {
            dim = v.parse::<usize>().ok();
        } else if let Some(v) = token.strip_prefix("count=") {
            count = v.parse::<usize>().ok();
        }
    }
    let (Some(dim), Some(count)) = (dim, count) else {
        return Err(RegisterError::MalformedDescriptors(format!("bad header {header:?}")));
    };
    let mut rows = Vec::with_capacity(count);
    let mut indices = Vec::with_capacity(count);
    for (r, line) in lines.enumerate() {
        let mut tokens = line.split_whitespace();
        let index: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| RegisterError::MalformedDescriptors(format!("row {r}: bad point index")))?;
        if index >= cloud_len {
            return Err(RegisterError::IndexOutOfRange { index, len: cloud_len });
        }
        let values = tokens
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| RegisterError::MalformedDescriptors(format!("row {r}: {e}")))?;
        if values.len() != dim {
            return Err(RegisterError::DimensionMismatch(format!(
                "row {r} has {} values, header declares {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RegisterError::NonFiniteValue(r));
        }
        rows.push(values);
        indices.push(index);
    }
    if rows.len() != count {
        return Err(RegisterError::MalformedDescriptors(format!(
            "header declares {count} rows, found {}",
            rows.len()
        )));
    }
    DescriptorField::new(dim, rows, indices)
}

/// Loads externally computed descriptors (e.g. learned 32-dimensional
/// features) whose point indices address `cloud`.
pub fn load_external_descriptors(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<DescriptorField, RegisterError> {
    let text = std::fs::read_to_string(path)?;
    parse_external_descriptors(&text, cloud.len())
}

#[inline]
fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mutual nearest-neighbour matching between `min(n, len)` seeded samples of
/// each field. Returns `(source point, target point)` pairs using the fields'
/// cloud indices, sorted by source index.
pub fn match_descriptors(
    fa: &DescriptorField,
    fb: &DescriptorField,
    n: usize,
    seed: u64,
) -> Result<CorrespondenceSet, RegisterError> {
    if n == 0 {
        return Err(RegisterError::InvalidParameter("n must be at least 1".into()));
    }
    if fa.is_empty() || fb.is_empty() {
        return Err(RegisterError::NoMutualMatches);
    }
    if fa.dimension() != fb.dimension() {
        return Err(RegisterError::DimensionMismatch(format!(
            "{} vs {}",
            fa.dimension(),
            fb.dimension()
        )));
    }
    let sa = fa.sample_positions(n, seed);
    let sb = fb.sample_positions(n, seed);

    // One pass over the distance matrix gives both row and column minima.
    // Strict `<` keeps the lowest position on ties.
    let mut best_a = vec![(usize::MAX, f64::INFINITY); sa.len()];
    let mut best_b = vec![(usize::MAX, f64::INFINITY); sb.len()];
    for (ia, &pa) in sa.iter().enumerate() {
        let da = fa.descriptor(pa);
        for (ib, &pb) in sb.iter().enumerate() {
            let d = dist_sq(da, fb.descriptor(pb));
            if d < best_a[ia].1 {
                best_a[ia] = (ib, d);
            }
            if d < best_b[ib].1 {
                best_b[ib] = (ia, d);
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = best_a
        .iter()
        .enumerate()
        .filter(|&(ia, &(ib, _))| ib != usize::MAX && best_b[ib].0 == ia)
        .map(|(ia, &(ib, _))| (fa.sample_indices()[sa[ia]], fb.sample_indices()[sb[ib]]))
        .collect();
    if pairs.is_empty() {
        return Err(RegisterError::NoMutualMatches);
    }
    pairs.sort_unstable();
    Ok(CorrespondenceSet::from_trusted(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn field_1d(values: &[f64]) -> DescriptorField {
        DescriptorField::new(1, values.iter().map(|&v| vec![v]).collect(), (0..values.len()).collect()).unwrap()
    }

    #[test]
    fn hand_enumerated_examples() {
        let m = match_descriptors(&field_1d(&[0.0, 10.0]), &field_1d(&[0.1, 9.0]), 10, 0).unwrap();
        assert_eq!(m.pairs(), &[(0, 0), (1, 1)]);
        let m = match_descriptors(&field_1d(&[0.0, 1.0]), &field_1d(&[0.4]), 10, 0).unwrap();
        assert_eq!(m.pairs(), &[(0, 0)]);
    }

    #[test]
    fn identical_fields_match_to_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..8).map(|_| rng.random()).collect()).collect();
        let f = DescriptorField::new(8, rows, (0..200).collect()).unwrap();
        let m = match_descriptors(&f, &f, 200, 9).unwrap();
        assert_eq!(m.len(), 200);
        assert!(m.pairs().iter().all(|&(a, b)| a == b));
    }

    #[test]
    fn swapping_sides_reverses_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mk = |rng: &mut ChaCha8Rng, n: usize| {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
            DescriptorField::new(4, rows, (0..n).map(|i| i * 3).collect()).unwrap()
        };
        let fa = mk(&mut rng, 300);
        let fb = mk(&mut rng, 250);
        for seed in 0..5 {
            let ab = match_descriptors(&fa, &fb, 100, seed).unwrap();
            let mut ba = match_descriptors(&fb, &fa, 100, seed).unwrap().swapped().pairs().to_vec();
            ba.sort_unstable();
            assert_eq!(ab.pairs(), ba.as_slice());
        }
    }

    #[test]
    fn external_file_parsing() {
        let ok = "dim=2 count=2\n0 0.5 1.5\n3 -1 2\n";
        let f = parse_external_descriptors(ok, 4).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.sample_indices(), &[0, 3]);
        assert_eq!(f.descriptor(1), &[-1.0, 2.0]);
        assert!(matches!(
            parse_external_descriptors("dim=2 count=1\n0 NaN 1\n", 4),
            Err(RegisterError::NonFiniteValue(0))
        ));
        assert!(matches!(
            parse_external_descriptors("dim=2 count=1\n4 0 1\n", 4),
            Err(RegisterError::IndexOutOfRange { index: 4, len: 4 })
        ));
        assert!(matches!(
            parse_external_descriptors("dim=3 count=1\n0 0 1\n", 4),
            Err(RegisterError::DimensionMismatch(_))
        ));
        assert!(matches!(
            parse_external_descriptors("dim=2 count=2\n0 0 1\n", 4),
            Err(RegisterError::MalformedDescriptors(_))
        ));
    }

    #[test]
    fn external_fcgf_sized_file() {
        let mut text = String::from("dim=32 count=250\n");
        for i in 0..250 {
            text.push_str(&i.to_string());
            for k in 0..32 {
                text.push_str(&format!(" {}", (i * 32 + k) as f64 * 0.001));
            }
            text.push('\n');
        }
        let f = parse_external_descriptors(&text, 1000).unwrap();
        assert_eq!((f.len(), f.dimension()), (250, 32));
    }
}
