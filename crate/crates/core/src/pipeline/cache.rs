//! Resumable store of computed pair scores.
//!
//! The cache is a JSON-lines file; each line holds one score tagged with the
//! fingerprint of the configuration that produced it. Lines carrying another
//! fingerprint, and lines that do not parse (a run killed mid-write), are
//! ignored on load.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::simscore::{write_model, LogisticModel, PairScore};

/// Hex SHA-256 over a JSON rendering of the scoring configuration and the
/// serialized model.
pub fn config_fingerprint<C: Serialize>(config: &C, model: &LogisticModel) -> Result<String, PipelineError> {
    let mut h = Sha256::new();
    h.update(b"diematch-pairs v1\n");
    h.update(serde_json::to_vec(config)?);
    h.update(b"\n");
    let mut model_bytes = Vec::new();
    write_model(model, &mut model_bytes)?;
    h.update(&model_bytes);
    Ok(hex::encode(h.finalize()))
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    fingerprint: String,
    score: PairScore,
}

pub struct PairCache {
    fingerprint: String,
    entries: BTreeMap<(String, String), PairScore>,
    path: Option<PathBuf>,
    writer: Option<BufWriter<File>>,
    ignored: usize,
}

impl PairCache {
    /// Cache that lives only as long as the value.
    pub fn in_memory(fingerprint: impl Into<String>) -> Self {
        Self {
            fingerprint: fingerprint.into(),
            entries: BTreeMap::new(),
            path: None,
            writer: None,
            ignored: 0,
        }
    }

    /// Opens (creating if needed) the cache file at `path`, loading the
    /// entries written under `fingerprint`.
    pub fn open(path: impl AsRef<Path>, fingerprint: impl Into<String>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let mut cache = Self::in_memory(fingerprint);
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(l) if l.fingerprint == cache.fingerprint => {
                        cache.entries.insert((l.score.id_a.clone(), l.score.id_b.clone()), l.score);
                    }
                    _ => cache.ignored += 1,
                }
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        cache.writer = Some(BufWriter::new(file));
        cache.path = Some(path.to_path_buf());
        Ok(cache)
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Lines skipped on load (other fingerprints or unparsable).
    pub fn ignored_lines(&self) -> usize {
        self.ignored
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Looks up a pair in either order.
    pub fn get(&self, a: &str, b: &str) -> Option<&PairScore> {
        let (a, b) = crate::simscore::canonical_pair(a, b);
        self.entries.get(&(a.to_string(), b.to_string()))
    }

    /// Stores `score`, appending it to the file (flushed immediately so a
    /// crash loses at most the line being written).
    pub fn insert(&mut self, score: PairScore) -> Result<(), PipelineError> {
        if let Some(w) = self.writer.as_mut() {
            let line = CacheLine {
                fingerprint: self.fingerprint.clone(),
                score,
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
            w.flush()?;
            self.entries.insert((line.score.id_a.clone(), line.score.id_b.clone()), line.score);
        } else {
            self.entries.insert((score.id_a.clone(), score.id_b.clone()), score);
        }
        Ok(())
    }
}

/// Every parsable score in a cache file whatever its fingerprint, the last
/// line winning per pair. For display only: scores may be stale.
pub fn read_all_scores(path: impl AsRef<Path>) -> Result<Vec<PairScore>, PipelineError> {
    let mut out = BTreeMap::new();
    for line in BufReader::new(File::open(path)?).lines() {
        if let Ok(l) = serde_json::from_str::<CacheLine>(&line?) {
            out.insert((l.score.id_a.clone(), l.score.id_b.clone()), l.score);
        }
    }
    Ok(out.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom3d::RigidTransform;
    use crate::register::StageTimings;
    use crate::simscore::DistanceHistogram;

    fn score(a: &str, b: &str, p: f64) -> PairScore {
        PairScore {
            id_a: a.into(),
            id_b: b.into(),
            transform: RigidTransform::identity(),
            histogram: DistanceHistogram::zero_distance(),
            probability: p,
            rmse: 0.01,
            stage_timings: StageTimings::default(),
        }
    }

    #[test]
    fn reload_keeps_only_matching_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        {
            let mut c = PairCache::open(&path, "f1").unwrap();
            c.insert(score("a", "b", 0.25)).unwrap();
        }
        {
            let mut c = PairCache::open(&path, "f2").unwrap();
            assert!(c.is_empty());
            assert_eq!(c.ignored_lines(), 1);
            c.insert(score("a", "c", 0.5)).unwrap();
        }
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"fingerprint\":\"f1\",\"sco");
        std::fs::write(&path, text).unwrap();
        let c = PairCache::open(&path, "f1").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get("b", "a").unwrap().probability, 0.25);
        assert_eq!(c.ignored_lines(), 2);
    }

    #[test]
    fn fingerprint_depends_on_config_and_model() {
        let m1 = LogisticModel::new(vec![0.0; 70], 0.0).unwrap();
        let m2 = LogisticModel::new(vec![0.0; 70], 1.0).unwrap();
        let f = |c: &str, m| config_fingerprint(&c, m).unwrap();
        assert_eq!(f("x", &m1), f("x", &m1));
        assert_ne!(f("x", &m1), f("y", &m1));
        assert_ne!(f("x", &m1), f("x", &m2));
        assert_eq!(f("x", &m1).len(), 64);
    }
}
