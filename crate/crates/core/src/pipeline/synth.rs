//! Synthetic dies and coins for desk-scale ground truth.
//!
//! A die is a band-limited random relief: a sum of plane waves with random
//! direction, frequency and phase. A coin struck from it samples the relief
//! on a disc (optionally offset within the die), attenuates high frequencies
//! to simulate wear, adds crack ridges, a rim with an irregular edge, a chord
//! crop and measurement noise, then places the scan with a random pose drawn
//! from the benchmark rotation ranges.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, ManifestEntry, Split};
use super::PipelineError;
use crate::evalmetrics::FaceCategory;
use crate::geom3d::{save_point_cloud, PlyFormat, PointCloud, RigidTransform, RotationRanges};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDieSpec {
    pub seed: u64,
    /// Root-mean-square height of the relief, mm.
    pub relief_amplitude: f64,
    /// Band of spatial frequencies, cycles per mm.
    pub min_frequency: f64,
    pub max_frequency: f64,
    pub n_components: usize,
    pub coin_radius: f64,
    /// Height and width of the raised rim, mm.
    pub rim_height: f64,
    pub rim_width: f64,
    /// Scanner grid spacing, mm.
    pub sample_spacing: f64,
}

impl Default for SyntheticDieSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            relief_amplitude: 0.1,
            min_frequency: 0.4,
            max_frequency: 2.5,
            n_components: 48,
            coin_radius: 2.5,
            rim_height: 0.05,
            rim_width: 0.15,
            sample_spacing: 0.05,
        }
    }
}

impl SyntheticDieSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("coin_radius", self.coin_radius),
            ("sample_spacing", self.sample_spacing),
            ("max_frequency", self.max_frequency),
            ("rim_width", self.rim_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PipelineError::Synthetic(format!("{name} must be positive")));
            }
        }
        let non_negative = [
            ("relief_amplitude", self.relief_amplitude),
            ("min_frequency", self.min_frequency),
            ("rim_height", self.rim_height),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PipelineError::Synthetic(format!("{name} must be non-negative")));
            }
        }
        if self.min_frequency > self.max_frequency {
            return Err(PipelineError::Synthetic("min_frequency exceeds max_frequency".into()));
        }
        Ok(())
    }
}

/// Per-coin damage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Degradation {
    /// Attenuation of a wave of frequency `f` is `exp(-4 wear (f/f_max)^2)`.
    pub wear: f64,
    pub crack_count: usize,
    pub crack_height: f64,
    pub crack_width: f64,
    /// Amplitude of the radial edge irregularity, mm.
    pub edge_jitter: f64,
    /// Fraction of the diameter removed by a straight chord, in [0, 1).
    pub crop_fraction: f64,
    /// Standard deviation of the height noise, mm.
    pub noise_sigma: f64,
    /// Maximum offset of the coin centre from the die centre, mm.
    pub strike_offset: f64,
    /// Translation range of the scan placement, mm (each axis uniform in
    /// ±this).
    pub placement_translation: f64,
    pub rotation: RotationRanges,
}

impl Default for Degradation {
    fn default() -> Self {
        Self::none()
    }
}

impl Degradation {
    /// Exact sampling of the die, identity pose.
    pub fn none() -> Self {
        Self {
            wear: 0.0,
            crack_count: 0,
            crack_height: 0.0,
            crack_width: 0.02,
            edge_jitter: 0.0,
            crop_fraction: 0.0,
            noise_sigma: 0.0,
            strike_offset: 0.0,
            placement_translation: 0.0,
            rotation: RotationRanges::NONE,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let non_negative = [
            ("wear", self.wear),
            ("crack_height", self.crack_height),
            ("edge_jitter", self.edge_jitter),
            ("noise_sigma", self.noise_sigma),
            ("strike_offset", self.strike_offset),
            ("placement_translation", self.placement_translation),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PipelineError::Synthetic(format!("{name} must be non-negative")));
            }
        }
        if !(self.crack_width > 0.0) {
            return Err(PipelineError::Synthetic("crack_width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.crop_fraction) {
            return Err(PipelineError::Synthetic("crop_fraction must be in [0, 1)".into()));
        }
        self.rotation.validate().map_err(|e| PipelineError::Synthetic(e.to_string()))
    }
}

/// Ranges from which each coin's [`Degradation`] is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationRanges {
    pub max_wear: f64,
    pub max_cracks: usize,
    pub crack_height: f64,
    pub crack_width: f64,
    pub edge_jitter: f64,
    pub max_crop_fraction: f64,
    pub noise_sigma: f64,
    pub strike_offset: f64,
    pub placement_translation: f64,
    pub rotation: RotationRanges,
}

impl Default for DegradationRanges {
    fn default() -> Self {
        Self {
            max_wear: 0.1,
            max_cracks: 1,
            crack_height: 0.03,
            crack_width: 0.03,
            edge_jitter: 0.08,
            max_crop_fraction: 0.15,
            noise_sigma: 0.003,
            strike_offset: 0.2,
            placement_translation: 2.0,
            rotation: RotationRanges::BENCHMARK,
        }
    }
}

impl DegradationRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Degradation {
        Degradation {
            wear: rng.random_range(0.0..=self.max_wear),
            crack_count: rng.random_range(0..=self.max_cracks),
            crack_height: self.crack_height,
            crack_width: self.crack_width,
            edge_jitter: self.edge_jitter,
            crop_fraction: rng.random_range(0.0..=self.max_crop_fraction),
            noise_sigma: self.noise_sigma,
            strike_offset: self.strike_offset,
            placement_translation: self.placement_translation,
            rotation: self.rotation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Wave {
    k: [f64; 2],
    /// Spatial frequency |k| / 2π, cycles per mm.
    frequency: f64,
    amplitude: f64,
    phase: f64,
}

/// Relief of one die: height as a function of die-plane position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiePattern {
    pub spec: SyntheticDieSpec,
    waves: Vec<Wave>,
}

impl DiePattern {
    /// Height and gradient at `(x, y)` with the given wear applied.
    pub fn relief(&self, x: f64, y: f64, wear: f64) -> (f64, f64, f64) {
        let mut h = 0.0;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for w in &self.waves {
            let f = w.frequency / self.spec.max_frequency;
            let a = w.amplitude * (-4.0 * wear * f * f).exp();
            let arg = w.k[0] * x + w.k[1] * y + w.phase;
            let (s, c) = arg.sin_cos();
            h += a * c;
            gx -= a * s * w.k[0];
            gy -= a * s * w.k[1];
        }
        (h, gx, gy)
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.relief(x, y, 0.0).0
    }
}

pub fn generate_synthetic_die(spec: &SyntheticDieSpec) -> Result<DiePattern, PipelineError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_components.max(1);
    // Unit-variance Gaussian amplitudes scaled so the relief RMS is
    // `relief_amplitude` in expectation.
    let scale = spec.relief_amplitude * (2.0 / n as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let waves = (0..spec.n_components)
        .map(|_| {
            let frequency = rng.random_range(spec.min_frequency..=spec.max_frequency);
            let theta = rng.random_range(0.0..TAU);
            let omega = TAU * frequency;
            Wave {
                k: [omega * theta.cos(), omega * theta.sin()],
                frequency,
                amplitude: scale * normal.sample(&mut rng),
                phase: rng.random_range(0.0..TAU),
            }
        })
        .collect();
    Ok(DiePattern {
        spec: spec.clone(),
        waves,
    })
}

/// One simulated scan and the pose that placed it.
#[derive(Debug, Clone)]
pub struct StruckCoin {
    pub cloud: PointCloud,
    /// Maps die-frame coordinates to scan coordinates.
    pub pose: RigidTransform,
}

struct Crack {
    a: Vector2<f64>,
    b: Vector2<f64>,
}

impl Crack {
    /// Offset from the closest point of the segment to `p`.
    fn offset(&self, p: Vector2<f64>) -> Vector2<f64> {
        let ab = self.b - self.a;
        let t = ((p - self.a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        p - (self.a + t * ab)
    }
}

/// Samples `die` into a scan. Deterministic for a fixed `seed`.
pub fn strike_coin(
    die: &DiePattern,
    degradation: &Degradation,
    seed: u64,
    id: &str,
) -> Result<StruckCoin, PipelineError> {
    degradation.validate()?;
    let spec = &die.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = spec.coin_radius;

    let center = if degradation.strike_offset > 0.0 {
        let r = degradation.strike_offset * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..TAU);
        Vector2::new(r * a.cos(), r * a.sin())
    } else {
        Vector2::zeros()
    };

    // Edge irregularity: a few low harmonics of the polar angle.
    let harmonics: Vec<(f64, f64, f64)> = (2..6)
        .map(|m| (m as f64, rng.random_range(-1.0..1.0), rng.random_range(0.0..TAU)))
        .collect();
    let edge_radius = |theta: f64| {
        let j: f64 = harmonics.iter().map(|&(m, a, ph)| a * (m * theta + ph).cos()).sum::<f64>() / 2.0;
        radius + degradation.edge_jitter * j
    };

    let cracks: Vec<Crack> = (0..degradation.crack_count)
        .map(|_| {
            let r = 0.7 * radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..TAU);
            let start = center + Vector2::new(r * a.cos(), r * a.sin());
            let dir = rng.random_range(0.0..TAU);
            let len = rng.random_range(0.5..1.5);
            Crack {
                a: start,
                b: start + len * Vector2::new(dir.cos(), dir.sin()),
            }
        })
        .collect();

    let crop_dir = {
        let a = rng.random_range(0.0..TAU);
        Vector2::new(a.cos(), a.sin())
    };
    let crop_limit = (1.0 - 2.0 * degradation.crop_fraction) * radius;

    let h = spec.sample_spacing;
    let offset = Vector2::new(rng.random_range(0.0..h), rng.random_range(0.0..h));
    let noise = Normal::new(0.0, degradation.noise_sigma.max(f64::MIN_POSITIVE)).expect("noise sigma");
    let reach = radius + degradation.edge_jitter + h;
    let steps = (reach / h).ceil() as i64;
    let rim_center = radius - spec.rim_width;
    let rim_sigma = spec.rim_width / 2.0;
    let crack_w2 = degradation.crack_width * degradation.crack_width;

    let mut points = Vec::new();
    let mut normals = Vec::new();
    for iy in -steps..=steps {
        for ix in -steps..=steps {
            let local = Vector2::new(ix as f64 * h, iy as f64 * h) + offset;
            let r = local.norm();
            let theta = local.y.atan2(local.x);
            if r > edge_radius(theta) || local.dot(&crop_dir) > crop_limit {
                continue;
            }
            let p = center + local;
            let (mut z, mut gx, mut gy) = die.relief(p.x, p.y, degradation.wear);

            if spec.rim_height > 0.0 && r > 0.0 {
                let u = (r - rim_center) / rim_sigma;
                let bump = spec.rim_height * (-0.5 * u * u).exp();
                let dr = -bump * u / rim_sigma;
                z += bump;
                gx += dr * local.x / r;
                gy += dr * local.y / r;
            }
            for c in &cracks {
                let d = c.offset(p);
                let ridge = degradation.crack_height * (-0.5 * d.norm_squared() / crack_w2).exp();
                z += ridge;
                gx -= ridge * d.x / crack_w2;
                gy -= ridge * d.y / crack_w2;
            }
            if degradation.noise_sigma > 0.0 {
                z += noise.sample(&mut rng);
            }
            points.push(Point3::new(p.x, p.y, z));
            normals.push(Vector3::new(-gx, -gy, 1.0).normalize());
        }
    }
    if points.is_empty() {
        return Err(PipelineError::Synthetic("coin has no sample points".into()));
    }

    let local = PointCloud::new(id, points, normals)?;
    let (rotation, _) = degradation.rotation.sample(&mut rng);
    let shift = if degradation.placement_translation > 0.0 {
        let t = degradation.placement_translation;
        Vector3::new(rng.random_range(-t..=t), rng.random_range(-t..=t), rng.random_range(-t..=t))
    } else {
        Vector3::zeros()
    };
    let c = local.centroid().expect("non-empty");
    let pose = RigidTransform::from_translation(shift).after(&RigidTransform::rotation_about(&rotation, &c));
    Ok(StruckCoin {
        cloud: local.transformed(&pose),
        pose,
    })
}

/// Parameters of a whole synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCorpusSpec {
    pub seed: u64,
    /// Coins struck from each die; its length is the number of dies.
    pub coins_per_die: Vec<usize>,
    pub face: FaceCategory,
    pub die: SyntheticDieSpec,
    pub degradation: DegradationRanges,
    /// First number used in the `L<nnnn><face>` scan ids.
    pub first_coin_number: usize,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            coins_per_die: vec![6; 5],
            face: FaceCategory::Reverse,
            die: SyntheticDieSpec::default(),
            degradation: DegradationRanges::default(),
            first_coin_number: 1,
        }
    }
}

/// A generated corpus held in memory.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: CorpusManifest,
    pub clouds: Vec<PointCloud>,
}

fn face_letter(face: FaceCategory) -> char {
    match face {
        FaceCategory::Reverse => 'R',
        FaceCategory::ObverseBeard | FaceCategory::ObverseNoBeard => 'D',
    }
}

/// Mixes a corpus seed with a role and an index into an independent stream
/// seed.
pub fn derive_seed(seed: u64, role: u64, index: u64) -> u64 {
    let mut z = seed ^ role.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates dies and coins. Scan ids are `L<nnnn>R` or `L<nnnn>D`, die ids
/// `<face letter><k>`; manifest paths are `<id>.ply`.
pub fn generate_corpus(spec: &SynthCorpusSpec) -> Result<SynthCorpus, PipelineError> {
    let letter = face_letter(spec.face);
    let mut entries = Vec::new();
    let mut clouds = Vec::new();
    let mut number = spec.first_coin_number;
    for (d, &n_coins) in spec.coins_per_die.iter().enumerate() {
        let die_spec = SyntheticDieSpec {
            seed: derive_seed(spec.seed, 1, d as u64),
            ..spec.die.clone()
        };
        let die = generate_synthetic_die(&die_spec)?;
        let die_id = format!("{letter}{}", d + 1);
        for _ in 0..n_coins {
            let id = format!("L{number:04}{letter}");
            let coin_seed = derive_seed(spec.seed, 2, number as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(coin_seed);
            let degradation = spec.degradation.sample(&mut rng);
            let coin = strike_coin(&die, &degradation, rng.random(), &id)?;
            entries.push(ManifestEntry {
                id: id.clone(),
                path: format!("{id}.ply").into(),
                face: spec.face,
                die: Some(die_id.clone()),
                split: None,
                pose: Some(coin.pose),
                descriptors: None,
            });
            clouds.push(coin.cloud);
            number += 1;
        }
    }
    Ok(SynthCorpus {
        manifest: CorpusManifest::new(entries)?,
        clouds,
    })
}

impl SynthCorpus {
    /// Assigns splits round-robin within each die (train, validation, test).
    pub fn assign_splits(&mut self) {
        let mut counters = std::collections::HashMap::new();
        for e in &mut self.manifest.entries {
            let k = counters.entry(e.die.clone()).or_insert(0usize);
            e.split = Some(match *k % 3 {
                0 => Split::Train,
                1 => Split::Validation,
                _ => Split::Test,
            });
            *k += 1;
        }
    }

    /// Writes every scan as binary PLY plus `manifest.json` into `dir`.
    pub fn write(&mut self, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (e, c) in self.manifest.entries.iter().zip(&self.clouds) {
            save_point_cloud(dir.join(&e.path), c, PlyFormat::BinaryLittleEndian)?;
        }
        self.manifest.base_dir = dir.to_path_buf();
        self.manifest.save(dir.join("manifest.json"))
    }
}

/// Ground-truth transform taking scan `a` onto scan `b` of the same die.
pub fn relative_pose(pose_a: &RigidTransform, pose_b: &RigidTransform) -> RigidTransform {
    pose_b.after(&pose_a.inverse())
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_die() {
        let spec = SyntheticDieSpec::default();
        let a = generate_synthetic_die(&spec).unwrap();
        let b = generate_synthetic_die(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.height(0.3, -1.2), b.height(0.3, -1.2));
    }

    #[test]
    fn zero_relief_is_flat() {
        let spec = SyntheticDieSpec {
            relief_amplitude: 0.0,
            rim_height: 0.0,
            ..Default::default()
        };
        let die = generate_synthetic_die(&spec).unwrap();
        let coin = strike_coin(&die, &Degradation::none(), 1, "flat").unwrap();
        assert!(coin.cloud.points().iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn undegraded_strike_samples_the_die() {
        let spec = SyntheticDieSpec {
            rim_height: 0.0,
            ..Default::default()
        };
        let die = generate_synthetic_die(&spec).unwrap();
        let coin = strike_coin(&die, &Degradation::none(), 3, "exact").unwrap();
        assert!(coin.pose.rotation_angle() == 0.0 && coin.pose.translation().norm() < 1e-12);
        for p in coin.cloud.points() {
            assert!((p.z - die.height(p.x, p.y)).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_normals_match_finite_differences() {
        let die = generate_synthetic_die(&SyntheticDieSpec::default()).unwrap();
        let deg = Degradation {
            wear: 0.2,
            crack_count: 2,
            crack_height: 0.03,
            ..Degradation::none()
        };
        let coin = strike_coin(&die, &deg, 5, "n").unwrap();
        // Recover the gradient from the normal and compare with the relief
        // away from rim and cracks, where only the waves contribute.
        let (_, gx, gy) = die.relief(0.1, 0.2, 0.2);
        let e = 1e-6;
        let fx = (die.relief(0.1 + e, 0.2, 0.2).0 - die.relief(0.1 - e, 0.2, 0.2).0) / (2.0 * e);
        let fy = (die.relief(0.1, 0.2 + e, 0.2).0 - die.relief(0.1, 0.2 - e, 0.2).0) / (2.0 * e);
        assert!((gx - fx).abs() < 1e-6 && (gy - fy).abs() < 1e-6);
        assert!(coin.cloud.normals().iter().all(|n| (n.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn corpus_ids_and_truth() {
        let spec = SynthCorpusSpec {
            coins_per_die: vec![2, 1],
            ..Default::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let ids = corpus.manifest.ids();
        assert_eq!(ids, ["L0001R", "L0002R", "L0003R"]);
        assert_eq!(corpus.manifest.entries[2].die.as_deref(), Some("R2"));
        let again = generate_corpus(&spec).unwrap();
        assert_eq!(again.clouds, corpus.clouds);
    }
}
