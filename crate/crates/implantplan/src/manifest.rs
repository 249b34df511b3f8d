//! Dataset manifests: one line per scan with its annotation, split
//! assignment and patient identity.
//!
//! Format: four whitespace-separated columns —
//! `<volume path> <landmark path> <split> <patient id>` — with `#` comment
//! lines. Relative paths resolve against the manifest's own directory, so a
//! dataset folder can be moved wholesale.
//!
//! Loading rejects any manifest in which a patient id appears in both the
//! train and test splits: patient-level leakage silently inflates every
//! downstream metric.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub volume: PathBuf,
    pub landmarks: PathBuf,
    pub split: Split,
    pub patient: String,
}

/// Parse and validate a manifest file.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::format(path, format!("cannot read manifest: {e}")))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::format(
                path,
                format!(
                    "line {}: expected 4 columns (volume landmarks split patient), got {}",
                    lineno + 1,
                    cols.len()
                ),
            ));
        }
        let split = match cols[2] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::format(
                    path,
                    format!("line {}: unknown split '{other}'", lineno + 1),
                ))
            }
        };
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        entries.push(ManifestEntry {
            volume: resolve(cols[0]),
            landmarks: resolve(cols[1]),
            split,
            patient: cols[3].to_string(),
        });
    }
    if entries.is_empty() {
        return Err(Error::format(path, "manifest lists no scans"));
    }
    check_leakage(&entries)?;
    Ok(entries)
}

/// Reject patient ids assigned to both splits.
pub fn check_leakage(entries: &[ManifestEntry]) -> Result<()> {
    let train: HashSet<&str> = entries
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| e.patient.as_str())
        .collect();
    let mut leaked: Vec<&str> = entries
        .iter()
        .filter(|e| e.split == Split::Test && train.contains(e.patient.as_str()))
        .map(|e| e.patient.as_str())
        .collect();
    leaked.sort_unstable();
    leaked.dedup();
    if !leaked.is_empty() {
        return Err(Error::Config(format!(
            "patient-level leakage: ids present in both train and test splits: {}",
            leaked.join(", ")
        )));
    }
    Ok(())
}

/// Write a manifest with the paths exactly as given.
pub fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::from("# volume landmarks split patient\n");
    for e in entries {
        out.push_str(&format!(
            "{} {} {} {}\n",
            e.volume.display(),
            e.landmarks.display(),
            e.split,
            e.patient
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
