//! Line-delimited manifest linking activation files to dialogue turns.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::embx::read_header;
use crate::store::write_atomically;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Text,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub dialogue_id: String,
    /// Speech: the user turn. Text: the target system turn of the window.
    pub turn_index: usize,
    pub modality: Modality,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub frames_valid: usize,
    /// Position of the decision marker in a text window; defaults to the last valid token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub da_pred_position: Option<usize>,
    /// Encoder name and pinned revision that produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<String>,
}

impl ManifestRecord {
    pub fn da_pred(&self) -> usize {
        self.da_pred_position.unwrap_or(self.frames_valid - 1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            records,
            base_dir: base_dir.into(),
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.base_dir.join(&record.path)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::storage(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::storage(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|source| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(records, base))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomically(path, |f| {
            let mut w = BufWriter::new(f);
            for r in &self.records {
                serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
            }
            w.flush()
        })
    }

    /// Ids unique, files present, headers agreeing with the records.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::validation(format!("duplicate manifest id {}", r.id)));
            }
            let h = read_header(&self.resolve(r))?;
            if (h.layers, h.frames, h.dim, h.frames_valid) != (r.layers, r.frames, r.dim, r.frames_valid) {
                return Err(Error::validation(format!(
                    "record {} declares L={} T={} D={} valid={}, file header has {h:?}",
                    r.id, r.layers, r.frames, r.dim, r.frames_valid
                )));
            }
            if r.da_pred() >= r.frames_valid {
                return Err(Error::validation(format!(
                    "record {}: decision position {} not among valid frames",
                    r.id,
                    r.da_pred()
                )));
            }
        }
        Ok(())
    }

    pub fn by_id(&self) -> HashMap<&str, &ManifestRecord> {
        self.records.iter().map(|r| (r.id.as_str(), r)).collect()
    }

    /// Lookup keyed by `(dialogue_id, turn_index, modality)`.
    pub fn by_turn(&self) -> HashMap<(&str, usize, Modality), &ManifestRecord> {
        self.records
            .iter()
            .map(|r| ((r.dialogue_id.as_str(), r.turn_index, r.modality), r))
            .collect()
    }
}
