//! Run manifest: content hashes of every stage's inputs and outputs, so a
//! completed stage whose surroundings have not changed can be skipped.
//!
//! A stage is "current" when its recorded entry matches the present world:
//! same stage version, same effective-config hash, and every recorded input
//! and output file still hashes to its recorded digest. Anything else
//! (missing files, changed bytes, unreadable paths) makes the stage stale,
//! which is always safe because stages are deterministic.
//!
//! Artifact writes go through [`write_atomic`]: bytes land in a sibling
//! `*.tmp` file that is renamed over the target, so a crash never leaves a
//! half-written artifact behind.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest is not valid JSON: {0}")]
    Format(#[from] serde_json::Error),
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    let mut file = std::fs::File::open(path)?;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Write to `<name>.tmp` in the same directory, then rename over `path`.
/// Parent directories are created as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let name = path.file_name().ok_or_else(|| {
        std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name")
    })?;
    let tmp = path.with_file_name(format!("{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileStamp {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub version: String,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, FileStamp>,
    pub outputs: BTreeMap<String, FileStamp>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_sha256: String,
    pub stages: BTreeMap<String, StageEntry>,
}

fn stamp(name: &str, path: &Path) -> std::io::Result<(String, FileStamp)> {
    Ok((
        name.to_string(),
        FileStamp {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        },
    ))
}

impl Manifest {
    pub fn new(seed: u64, config_sha256: String) -> Self {
        Manifest {
            seed,
            config_sha256,
            stages: BTreeMap::new(),
        }
    }

    /// `Ok(None)` when no manifest file exists yet.
    pub fn load(path: &Path) -> Result<Option<Manifest>, ManifestError> {
        match std::fs::read(path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)?;
        Ok(())
    }

    /// Whether `stage` can be skipped; see module docs for the rule.
    pub fn stage_is_current(
        &self,
        stage: &str,
        version: &str,
        config_sha256: &str,
        inputs: &[(&str, &Path)],
        outputs: &[(&str, &Path)],
    ) -> bool {
        let Some(entry) = self.stages.get(stage) else {
            return false;
        };
        if entry.version != version || entry.config_sha256 != config_sha256 {
            return false;
        }
        let side_matches = |recorded: &BTreeMap<String, FileStamp>, current: &[(&str, &Path)]| {
            if recorded.len() != current.len() {
                return false;
            }
            current.iter().all(
                |(name, path)| match (recorded.get(*name), sha256_file(path)) {
                    (Some(stamp), Ok(hash)) => stamp.sha256 == hash,
                    _ => false,
                },
            )
        };
        side_matches(&entry.inputs, inputs) && side_matches(&entry.outputs, outputs)
    }

    /// Hash the named files now and record the stage as completed.
    pub fn record_stage(
        &mut self,
        stage: &str,
        version: &str,
        inputs: &[(&str, &Path)],
        outputs: &[(&str, &Path)],
    ) -> Result<(), ManifestError> {
        let collect = |side: &[(&str, &Path)]| -> std::io::Result<BTreeMap<String, FileStamp>> {
            side.iter().map(|(name, path)| stamp(name, path)).collect()
        };
        self.stages.insert(
            stage.to_string(),
            StageEntry {
                version: version.to_string(),
                config_sha256: self.config_sha256.clone(),
                inputs: collect(inputs)?,
                outputs: collect(outputs)?,
            },
        );
        Ok(())
    }
}
