use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Shape3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub patient_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub shape: Shape3,
    pub split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    patient_id: String,
    path: String,
    depth: usize,
    height: usize,
    width: usize,
    split: Split,
}

/// Corpus listing, stored as CSV with header
/// `patient_id,path,depth,height,width,split`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub corpus_seed: Option<u64>,
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn get(&self, patient_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.patient_id == patient_id)
    }

    pub fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.patient_id.as_str()) {
                return Err(Error::Invalid(format!("duplicate patient_id {:?} in manifest", e.patient_id)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(Row {
                patient_id: e.patient_id.clone(),
                path: e.path.to_string_lossy().into_owned(),
                depth: e.shape.0[0],
                height: e.shape.0[1],
                width: e.shape.0[2],
                split: e.split,
            })?;
        }
        if self.entries.is_empty() {
            w.write_record(["patient_id", "path", "depth", "height", "width", "split"])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads a manifest, resolving relative paths against its directory and
    /// checking that ids are unique and every file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(file);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["patient_id", "path", "depth", "height", "width", "split"] {
            return Err(Error::Invalid(format!("{}: unexpected manifest header", path.display())));
        }
        let mut entries = Vec::new();
        for row in r.deserialize::<Row>() {
            let row = row?;
            let rel = PathBuf::from(&row.path);
            let resolved = if rel.is_absolute() { rel } else { base.join(rel) };
            if !resolved.is_file() {
                return Err(Error::Invalid(format!(
                    "manifest entry {:?}: {} does not exist",
                    row.patient_id,
                    resolved.display()
                )));
            }
            entries.push(ManifestEntry {
                patient_id: row.patient_id,
                path: resolved,
                shape: Shape3::new(row.depth, row.height, row.width),
                split: row.split,
            });
        }
        let m = CorpusManifest { entries, corpus_seed: None };
        m.check_unique_ids()?;
        Ok(m)
    }
}
