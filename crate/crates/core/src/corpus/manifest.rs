//! Corpus manifest: one JSON line per study.

use crate::corpus::volume::VolumeTensor;
use crate::error::CoreError;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self, CoreError> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CoreError::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One study row. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyRecord {
    pub study_id: String,
    pub volume: String,
    pub report: String,
    pub labels: Vec<i8>,
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub split: Split,
}

impl StudyRecord {
    pub fn volume_path(&self, manifest_dir: &Path) -> PathBuf {
        manifest_dir.join(&self.volume)
    }

    pub fn mask_path(&self, manifest_dir: &Path) -> Option<PathBuf> {
        self.mask.as_ref().map(|m| manifest_dir.join(m))
    }
}

pub fn write_manifest(path: &Path, records: &[StudyRecord]) -> Result<(), CoreError> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| CoreError::Data(format!("serialize manifest row: {e}")))?;
        writeln!(f, "{line}").map_err(|e| CoreError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Read and validate a manifest. Every referenced volume must exist; studies
/// with fewer than `min_slices` slices are dropped.
pub fn read_manifest(path: &Path, min_slices: Option<usize>) -> Result<Vec<StudyRecord>, CoreError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let f = std::fs::File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(f);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StudyRecord = serde_json::from_str(&line).map_err(|e| {
            CoreError::Data(format!(
                "{}:{}: malformed manifest row: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        let vpath = rec.volume_path(dir);
        if !vpath.exists() {
            return Err(CoreError::Data(format!(
                "study {}: volume file {} does not exist",
                rec.study_id,
                vpath.display()
            )));
        }
        if let Some(min) = min_slices {
            let (shape, _) = VolumeTensor::read_header(&vpath)?;
            if shape[2] < min {
                continue;
            }
        }
        out.push(rec);
    }
    Ok(out)
}
