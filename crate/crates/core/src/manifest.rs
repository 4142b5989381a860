//! Run directories and their manifests.
//!
//! A run lives in one directory: one archive per checkpoint plus a
//! `manifest.json` tying them together. The manifest carries the full
//! training configuration, lineage for branches, the checkpoint list with
//! each step's evaluation stats, and version stamps — everything analysis
//! needs, so a run directory is self-contained.
//!
//! The manifest is written last. A directory without one is an aborted
//! run and is never picked up by analysis.
//!
//! `config_hash` fingerprints the configuration through a canonical JSON
//! form (object keys sorted, no whitespace), so the hash survives key
//! reordering and formatting differences in config files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{CheckpointSeries, EvalStats, RunStatus, Snapshot, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::fnv1a;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub step: u64,
    /// Archive filename relative to the run directory.
    pub archive: String,
    #[serde(flatten)]
    pub eval: EvalStats,
}

/// Where a run came from, if it is not a fresh trunk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestLineage {
    /// Identifier of the trunk run (its directory name), when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trunk: Option<String>,
    pub split_step: u64,
    pub branch_seed: u64,
    /// Identifier of the mask applied during retraining, when any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_eta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub code_version: String,
    pub config: TrainConfig,
    pub config_hash: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<ManifestLineage>,
    pub checkpoints: Vec<CheckpointEntry>,
}

/// Serialize a JSON value with object keys sorted and no whitespace.
/// Two values that differ only in key order canonicalize identically.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string serializes"));
                out.push(':');
                write_canonical(&map[*k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&serde_json::to_string(other).expect("scalar serializes")),
    }
}

/// FNV-1a 64 fingerprint of a configuration's canonical JSON form, as
/// 16 lowercase hex digits.
pub fn config_hash(cfg: &TrainConfig) -> Result<String> {
    let value = serde_json::to_value(cfg).map_err(Error::Json)?;
    Ok(format!("{:016x}", fnv1a(canonical_json(&value).as_bytes())))
}

fn archive_name(step: u64) -> String {
    format!("step_{step:08}.spdy")
}

/// Extra identity a caller can attach to a branch's lineage record.
#[derive(Clone, Debug, Default)]
pub struct LineageTags {
    pub trunk: Option<String>,
    pub mask_id: Option<String>,
}

/// Write a completed series as a run directory: one archive per
/// checkpoint, then the manifest. Returns the manifest as written.
pub fn write_run_dir(
    dir: &Path,
    series: &CheckpointSeries,
    tags: &LineageTags,
) -> Result<RunManifest> {
    std::fs::create_dir_all(dir).map_err(Error::Io)?;
    let mut checkpoints = Vec::with_capacity(series.snapshots.len());
    for snap in &series.snapshots {
        let name = archive_name(snap.step);
        crate::archive::save_archive(&dir.join(&name), &snap.params)?;
        checkpoints.push(CheckpointEntry {
            step: snap.step,
            archive: name,
            eval: snap.eval,
        });
    }
    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        code_version: CODE_VERSION.to_string(),
        config: series.config.clone(),
        config_hash: config_hash(&series.config)?,
        status: series.status,
        lineage: series.lineage.as_ref().map(|l| ManifestLineage {
            trunk: tags.trunk.clone(),
            split_step: l.split_step,
            branch_seed: l.branch_seed,
            mask_id: tags.mask_id.clone(),
            perturb_eta: l.perturb_eta,
        }),
        checkpoints,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::Json)?;
    std::fs::write(dir.join(MANIFEST_FILE), text + "\n").map_err(Error::Io)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Manifest {
        detail: format!("cannot read {}: {e}", path.display()),
    })?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        detail: format!("cannot parse {}: {e}", path.display()),
    })?;
    if manifest.manifest_version != MANIFEST_VERSION {
        return Err(Error::Manifest {
            detail: format!(
                "unsupported manifest version {}, expected {MANIFEST_VERSION}",
                manifest.manifest_version
            ),
        });
    }
    Ok(manifest)
}

/// Rebuild the in-memory series from a run directory.
pub fn load_series(dir: &Path) -> Result<CheckpointSeries> {
    let manifest = load_manifest(dir)?;
    let mut snapshots = Vec::with_capacity(manifest.checkpoints.len());
    for entry in &manifest.checkpoints {
        let params = crate::archive::load_archive(&dir.join(&entry.archive))?;
        snapshots.push(Snapshot {
            step: entry.step,
            params,
            eval: entry.eval,
        });
    }
    Ok(CheckpointSeries {
        config: manifest.config.clone(),
        snapshots,
        status: manifest.status,
        lineage: manifest.lineage.as_ref().map(|l| crate::dynamics::Lineage {
            split_step: l.split_step,
            branch_seed: l.branch_seed,
            perturb_eta: l.perturb_eta,
        }),
    })
}

/// A run directory is complete once its manifest exists.
pub fn is_complete(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file()
}

/// Check a run directory end to end: the manifest parses, its stored
/// config hash matches the config, checkpoint steps are strictly
/// increasing, and every referenced archive exists and parses.
pub fn validate_run_dir(dir: &Path) -> Result<RunManifest> {
    let manifest = load_manifest(dir)?;
    let expect = config_hash(&manifest.config)?;
    if manifest.config_hash != expect {
        return Err(Error::Manifest {
            detail: format!(
                "config hash {} does not match configuration (expected {expect})",
                manifest.config_hash
            ),
        });
    }
    if manifest.checkpoints.is_empty() {
        return Err(Error::Manifest {
            detail: "manifest lists no checkpoints".into(),
        });
    }
    for pair in manifest.checkpoints.windows(2) {
        if pair[0].step >= pair[1].step {
            return Err(Error::Manifest {
                detail: format!(
                    "checkpoint steps not strictly increasing: {} then {}",
                    pair[0].step, pair[1].step
                ),
            });
        }
    }
    for entry in &manifest.checkpoints {
        let path = dir.join(&entry.archive);
        crate::archive::load_archive(&path).map_err(|e| Error::Manifest {
            detail: format!("checkpoint {} ({}): {e}", entry.step, path.display()),
        })?;
    }
    Ok(manifest)
}

/// Run directories under a root, sorted by name; directories without a
/// manifest are skipped.
pub fn list_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(Error::Io)? {
        let path = entry.map_err(Error::Io)?.path();
        if path.is_dir() && is_complete(&path) {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
