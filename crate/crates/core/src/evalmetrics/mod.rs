//! Registration and clustering evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geom3d::{PointCloud, RigidTransform};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("every point coincides with the centroid")]
    DegenerateCloud,
    #[error("die {0:?} has no pairs")]
    EmptyDie(String),
    #[error("labelings cover different items")]
    ItemSetMismatch,
    #[error("lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Denominator terms below this (mm) are skipped.
const SRE_MIN_DENOMINATOR: f64 = 1e-12;

/// Scaled registration error of `est` against `gt` on `source`.
pub fn sre(source: &PointCloud, gt: &RigidTransform, est: &RigidTransform) -> Result<f64, MetricsError> {
    let points = source.points();
    let c = source.centroid().ok_or(MetricsError::DegenerateCloud)?;
    let gc = gt.apply_point(&c);
    let mut sum = 0.0;
    let mut used = 0usize;
    for p in points {
        let g = gt.apply_point(p);
        let denom = (g - gc).norm();
        if denom < SRE_MIN_DENOMINATOR {
            continue;
        }
        sum += (g - est.apply_point(p)).norm() / denom;
        used += 1;
    }
    if used == 0 {
        return Err(MetricsError::DegenerateCloud);
    }
    if used < points.len() {
        log::warn!("SRE skipped {} point(s) at the centroid", points.len() - used);
    }
    Ok(sum / used as f64)
}

/// Midpoint median. `values` must be non-empty.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceCategory {
    Reverse,
    ObverseBeard,
    ObverseNoBeard,
}

impl FaceCategory {
    pub const ALL: [FaceCategory; 3] = [FaceCategory::Reverse, FaceCategory::ObverseBeard, FaceCategory::ObverseNoBeard];

    pub fn name(self) -> &'static str {
        match self {
            FaceCategory::Reverse => "reverse",
            FaceCategory::ObverseBeard => "obverse_beard",
            FaceCategory::ObverseNoBeard => "obverse_no_beard",
        }
    }
}

impl std::str::FromStr for FaceCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reverse" => Ok(FaceCategory::Reverse),
            "obverse_beard" => Ok(FaceCategory::ObverseBeard),
            "obverse_no_beard" => Ok(FaceCategory::ObverseNoBeard),
            other => Err(format!("unknown face {other:?}")),
        }
    }
}

/// Per-die median SRE with category and overall means of the medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DieBenchmarkReport {
    pub per_die_median_sre: BTreeMap<String, f64>,
    pub per_category_mean: BTreeMap<FaceCategory, f64>,
    pub overall: f64,
}

/// Aggregates pair SREs. Dies without a category entry count towards the
/// overall mean only.
pub fn aggregate_sre(
    per_pair: &BTreeMap<String, Vec<f64>>,
    categories: &BTreeMap<String, FaceCategory>,
) -> Result<DieBenchmarkReport, MetricsError> {
    let mut per_die = BTreeMap::new();
    for (die, values) in per_pair {
        if values.is_empty() {
            return Err(MetricsError::EmptyDie(die.clone()));
        }
        per_die.insert(die.clone(), median(values));
    }
    let mut sums: BTreeMap<FaceCategory, (f64, usize)> = BTreeMap::new();
    for (die, &m) in &per_die {
        if let Some(&cat) = categories.get(die) {
            let e = sums.entry(cat).or_default();
            e.0 += m;
            e.1 += 1;
        }
    }
    let overall = if per_die.is_empty() {
        0.0
    } else {
        per_die.values().sum::<f64>() / per_die.len() as f64
    };
    Ok(DieBenchmarkReport {
        per_die_median_sre: per_die,
        per_category_mean: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        overall,
    })
}

/// Renders reports as a text table: one row per method, one column per die
/// (grouped by category), category means and the overall mean, plus the
/// mean seconds per pair. Values are SRE × 1000.
pub fn render_benchmark_table(
    rows: &[(String, DieBenchmarkReport, f64)],
    categories: &BTreeMap<String, FaceCategory>,
) -> String {
    let mut dies: Vec<&String> = rows
        .iter()
        .flat_map(|(_, r, _)| r.per_die_median_sre.keys())
        .collect();
    dies.sort_by_key(|d| (categories.get(*d).copied(), (*d).clone()));
    dies.dedup();
    let present: Vec<FaceCategory> = FaceCategory::ALL
        .into_iter()
        .filter(|c| dies.iter().any(|d| categories.get(*d) == Some(c)))
        .collect();

    let method_width = rows.iter().map(|(m, _, _)| m.len()).max().unwrap_or(0).max(6);
    let mut header = format!("{:<method_width$}", "method");
    for d in &dies {
        let _ = write!(header, " {:>9}", d);
    }
    for c in &present {
        let _ = write!(header, " {:>17}", c.name());
    }
    let _ = write!(header, " {:>9} {:>9}", "all", "time_s");
    let mut out = header;
    out.push('\n');
    for (method, report, seconds) in rows {
        let _ = write!(out, "{:<method_width$}", method);
        for d in &dies {
            match report.per_die_median_sre.get(*d) {
                Some(v) => {
                    let _ = write!(out, " {:>9.1}", v * 1000.0);
                }
                None => {
                    let _ = write!(out, " {:>9}", "-");
                }
            }
        }
        for c in &present {
            match report.per_category_mean.get(c) {
                Some(v) => {
                    let _ = write!(out, " {:>17.1}", v * 1000.0);
                }
                None => {
                    let _ = write!(out, " {:>17}", "-");
                }
            }
        }
        let _ = writeln!(out, " {:>9.1} {:>9.3}", report.overall * 1000.0, seconds);
    }
    out
}

/// Unordered-pair agreement counts between two labelings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairConfusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl PairConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn check_same_items<K: Eq + std::hash::Hash + Ord>(
    pred: &BTreeMap<K, usize>,
    truth: &BTreeMap<K, usize>,
) -> Result<(), MetricsError> {
    if pred.len() != truth.len() || pred.keys().zip(truth.keys()).any(|(a, b)| a != b) {
        return Err(MetricsError::ItemSetMismatch);
    }
    Ok(())
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Contingency table of two aligned label vectors.
struct Contingency {
    cells: HashMap<(usize, usize), u64>,
    rows: HashMap<usize, u64>,
    cols: HashMap<usize, u64>,
    n: u64,
}

impl Contingency {
    fn new(pred: &[usize], truth: &[usize]) -> Self {
        let mut cells = HashMap::new();
        let mut rows = HashMap::new();
        let mut cols = HashMap::new();
        for (&p, &t) in pred.iter().zip(truth) {
            *cells.entry((p, t)).or_insert(0) += 1;
            *rows.entry(p).or_insert(0) += 1;
            *cols.entry(t).or_insert(0) += 1;
        }
        Self {
            cells,
            rows,
            cols,
            n: pred.len() as u64,
        }
    }

    fn confusion(&self) -> PairConfusion {
        let same_both: u64 = self.cells.values().map(|&c| choose2(c)).sum();
        let same_pred: u64 = self.rows.values().map(|&c| choose2(c)).sum();
        let same_truth: u64 = self.cols.values().map(|&c| choose2(c)).sum();
        let total = choose2(self.n);
        PairConfusion {
            tp: same_both,
            fp: same_pred - same_both,
            fn_: same_truth - same_both,
            tn: total + same_both - same_pred - same_truth,
        }
    }
}

/// Label vectors aligned on the shared item set.
fn aligned<K: Ord + Eq + std::hash::Hash>(
    pred: &BTreeMap<K, usize>,
    truth: &BTreeMap<K, usize>,
) -> Result<(Vec<usize>, Vec<usize>), MetricsError> {
    check_same_items(pred, truth)?;
    Ok((pred.values().copied().collect(), truth.values().copied().collect()))
}

/// Pair counts for labelings given as aligned vectors (item `i` has
/// `pred[i]` and `truth[i]`).
pub fn pair_confusion_labels(pred: &[usize], truth: &[usize]) -> Result<PairConfusion, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::ItemSetMismatch);
    }
    Ok(Contingency::new(pred, truth).confusion())
}

/// Pair counts for labelings keyed by item id.
pub fn pair_confusion<K: Ord + Eq + std::hash::Hash>(
    pred: &BTreeMap<K, usize>,
    truth: &BTreeMap<K, usize>,
) -> Result<PairConfusion, MetricsError> {
    let (p, t) = aligned(pred, truth)?;
    pair_confusion_labels(&p, &t)
}

/// Fowlkes–Mallows index; 0 when the denominator vanishes.
pub fn fmi_labels(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    let c = pair_confusion_labels(pred, truth)?;
    let denom = ((c.tp + c.fp) as f64 * (c.tp + c.fn_) as f64).sqrt();
    Ok(if denom == 0.0 { 0.0 } else { c.tp as f64 / denom })
}

pub fn fmi<K: Ord + Eq + std::hash::Hash>(
    pred: &BTreeMap<K, usize>,
    truth: &BTreeMap<K, usize>,
) -> Result<f64, MetricsError> {
    let (p, t) = aligned(pred, truth)?;
    fmi_labels(&p, &t)
}

/// Adjusted Rand index in the contingency-table form. Returns 1 when the
/// expected and maximal index coincide (e.g. both labelings all singletons).
pub fn ari_labels(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::ItemSetMismatch);
    }
    let t = Contingency::new(pred, truth);
    let index: f64 = t.cells.values().map(|&c| choose2(c) as f64).sum();
    let a: f64 = t.rows.values().map(|&c| choose2(c) as f64).sum();
    let b: f64 = t.cols.values().map(|&c| choose2(c) as f64).sum();
    let total = choose2(t.n) as f64;
    let expected = if total == 0.0 { 0.0 } else { a * b / total };
    let max = 0.5 * (a + b);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

pub fn ari<K: Ord + Eq + std::hash::Hash>(
    pred: &BTreeMap<K, usize>,
    truth: &BTreeMap<K, usize>,
) -> Result<f64, MetricsError> {
    let (p, t) = aligned(pred, truth)?;
    ari_labels(&p, &t)
}

/// Fraction of pairs where `p >= cut` agrees with the truth.
pub fn pair_accuracy(probabilities: &[f64], truth_same_die: &[bool], cut: f64) -> Result<f64, MetricsError> {
    if probabilities.len() != truth_same_die.len() {
        return Err(MetricsError::LengthMismatch(probabilities.len(), truth_same_die.len()));
    }
    if probabilities.is_empty() {
        return Ok(0.0);
    }
    let correct = probabilities
        .iter()
        .zip(truth_same_die)
        .filter(|(&p, &t)| (p >= cut) == t)
        .count();
    Ok(correct as f64 / probabilities.len() as f64)
}
