//! Corpus manifests: which scans exist, where they live and what is known
//! about them.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::evalmetrics::FaceCategory;
use crate::geom3d::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths are resolved against the manifest's directory.
    pub path: PathBuf,
    pub face: FaceCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub die: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Known placement of the scan relative to its die frame (synthetic
    /// corpora); the ground truth between two scans of a die is
    /// `pose_b ∘ pose_a⁻¹`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<RigidTransform>,
    /// Externally computed descriptor file for this scan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    /// Validates id uniqueness; files are not touched.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, PipelineError> {
        let m = Self {
            entries,
            base_dir: PathBuf::new(),
        };
        m.check_ids()?;
        Ok(m)
    }

    fn check_ids(&self) -> Result<(), PipelineError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.id.is_empty() {
                return Err(PipelineError::Manifest("empty scan id".into()));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(PipelineError::Manifest(format!("duplicate scan id {:?}", e.id)));
            }
        }
        Ok(())
    }

    /// Reads a manifest and checks that every referenced scan exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Manifest(format!("cannot read {}: {e}", path.display())))?;
        let mut m: CorpusManifest = serde_json::from_str(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check_ids()?;
        for e in &m.entries {
            let p = m.resolve(&e.path);
            if !p.is_file() {
                return Err(PipelineError::Manifest(format!("scan {:?}: missing file {}", e.id, p.display())));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Rewrites relative paths so they resolve the same from `new_base`
    /// (paths outside it become absolute).
    pub fn rebase(&mut self, new_base: &Path) -> Result<(), PipelineError> {
        let base = self.base_dir.clone();
        let rebase_one = |p: &Path| -> Result<PathBuf, PipelineError> {
            if p.is_absolute() {
                return Ok(p.to_path_buf());
            }
            let full = base.join(p);
            Ok(match full.strip_prefix(new_base) {
                Ok(rel) => rel.to_path_buf(),
                Err(_) => std::path::absolute(&full)?,
            })
        };
        for e in &mut self.entries {
            e.path = rebase_one(&e.path)?;
            if let Some(d) = &e.descriptors {
                e.descriptors = Some(rebase_one(d)?);
            }
        }
        self.base_dir = new_base.to_path_buf();
        Ok(())
    }

    pub fn scan_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.resolve(&entry.path)
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries of the given split; all entries when no entry carries a split.
    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        if self.entries.iter().all(|e| e.split.is_none()) {
            return self.entries.iter().collect();
        }
        self.entries.iter().filter(|e| e.split == Some(split)).collect()
    }
}

/// Face inferred from a dataset-style id: a trailing `R` is a reverse, a
/// trailing `D` an obverse without beard.
pub fn infer_face(id: &str) -> Option<FaceCategory> {
    match id.chars().last()? {
        'R' | 'r' => Some(FaceCategory::Reverse),
        'D' | 'd' => Some(FaceCategory::ObverseNoBeard),
        _ => None,
    }
}

/// Manifest over every `.ply` file in `dir` (sorted by id). Ids are file
/// stems; the face comes from the id suffix, falling back to `default_face`.
pub fn ingest_directory(dir: impl AsRef<Path>, default_face: Option<FaceCategory>) -> Result<CorpusManifest, PipelineError> {
    let dir = dir.as_ref();
    let mut entries = Vec::new();
    for item in std::fs::read_dir(dir)? {
        let path = item?.path();
        if path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() != Some("ply") {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        let face = infer_face(&id).or(default_face).ok_or_else(|| {
            PipelineError::Manifest(format!("cannot infer the face of {id:?}; pass a default face"))
        })?;
        let rel = path.file_name().map(PathBuf::from).unwrap_or_else(|| path.clone());
        entries.push(ManifestEntry {
            id,
            path: rel,
            face,
            die: None,
            split: None,
            pose: None,
            descriptors: None,
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let mut m = CorpusManifest::new(entries)?;
    m.base_dir = dir.to_path_buf();
    Ok(m)
}
