//! Per-stage manifests: what a stage read, what it wrote and which upstream
//! manifests it was built on. Manifests carry no timestamps, so rerunning a
//! stage on unchanged inputs rewrites them byte-for-byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mufu_core::digest::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::stage::Stage;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub prng: String,
    pub config_digest: String,
    pub seeds: BTreeMap<String, u64>,
    /// Input name to content digest.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the stage directory) to content digest.
    pub outputs: BTreeMap<String, String>,
    /// Upstream stage name to the digest of its manifest file.
    pub upstream: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// Dependency problems reported before a stage runs.
#[derive(Debug)]
pub enum DependencyError {
    Missing { stage: String, needed_by: String },
    Stale { stage: String, needed_by: String, reason: String },
}

impl std::fmt::Display for DependencyError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Missing { stage, needed_by } => write!(
                f,
                "dependency error: `{needed_by}` needs stage `{stage}`, which has no manifest; run `mufu {stage}` first"
            ),
            Self::Stale {
                stage,
                needed_by,
                reason,
            } => write!(
                f,
                "dependency error: `{needed_by}` needs stage `{stage}`, whose manifest is stale ({reason}); rerun `mufu {stage}`"
            ),
        }
    }
}

impl std::error::Error for DependencyError {}

pub fn stage_dir(output_dir: &Path, stage: Stage) -> PathBuf {
    output_dir.join(stage.name())
}

pub fn manifest_path(output_dir: &Path, stage: Stage) -> PathBuf {
    stage_dir(output_dir, stage).join(MANIFEST_FILE)
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn read_manifest(output_dir: &Path, stage: Stage) -> Result<Option<(Manifest, String)>> {
    let path = manifest_path(output_dir, stage);
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(&path)?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some((manifest, sha256_hex(&bytes))))
}

pub fn write_manifest(output_dir: &Path, manifest: &Manifest) -> Result<String> {
    let dir = output_dir.join(&manifest.stage);
    std::fs::create_dir_all(&dir)?;
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    std::fs::write(dir.join(MANIFEST_FILE), &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Checks that the recorded outputs are still on disk unchanged.
pub fn outputs_intact(output_dir: &Path, manifest: &Manifest) -> Result<Option<String>> {
    let dir = output_dir.join(&manifest.stage);
    for (name, digest) in &manifest.outputs {
        let path = dir.join(name);
        if !path.exists() {
            return Ok(Some(format!("output {name} is missing")));
        }
        if &file_digest(&path)? != digest {
            return Ok(Some(format!("output {name} was modified")));
        }
    }
    Ok(None)
}
