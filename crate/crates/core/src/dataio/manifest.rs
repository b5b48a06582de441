//! Pair manifests: the dataset contract between simulation, training and
//! evaluation. Stored as pretty-printed JSON; image paths are relative to the
//! manifest's directory unless absolute.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Normalization;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    pub full_path: String,
    pub quarter_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairManifest {
    pub version: u32,
    pub normalization: Normalization,
    pub pairs: Vec<PairEntry>,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PartialEq for PairManifest {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.normalization == other.normalization
            && self.pairs == other.pairs
    }
}

impl PairManifest {
    pub fn new(normalization: Normalization, pairs: Vec<PairEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            version: MANIFEST_VERSION,
            normalization,
            pairs,
            base_dir: base_dir.into(),
        };
        m.check_ids()?;
        Ok(m)
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in &self.pairs {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate pair id {}", p.id)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn get(&self, id: &str) -> Option<&PairEntry> {
        self.pairs.iter().find(|p| p.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.id.clone()).collect()
    }

    /// Ids of pairs available for training (everything not tagged `test`).
    pub fn trainable_ids(&self) -> Vec<String> {
        self.pairs
            .iter()
            .filter(|p| p.split != Some(Split::Test))
            .map(|p| p.id.clone())
            .collect()
    }

    pub fn ids_with_split(&self, split: Split) -> Vec<String> {
        self.pairs
            .iter()
            .filter(|p| p.split == Some(split))
            .map(|p| p.id.clone())
            .collect()
    }

    /// Writes atomically (temp file + rename).
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    /// Reads and validates: unique ids, `lo < hi`, and every referenced file exists.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: PairManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        Normalization::new(m.normalization.lo, m.normalization.hi)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        m.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        m.check_ids()?;
        let mut missing = Vec::new();
        for p in &m.pairs {
            let mut paths = vec![&p.full_path, &p.quarter_path];
            paths.extend(p.ground_truth_path.as_ref());
            for rel in paths {
                if !m.resolve(rel).is_file() {
                    missing.push(format!("{} ({rel})", p.id));
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Manifest(format!(
                "missing files for pairs: {}",
                missing.join(", ")
            )));
        }
        Ok(m)
    }
}
