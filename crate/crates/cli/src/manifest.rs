//! Per-output manifests. Every file a command writes gets a sidecar
//! `<file>.manifest.json` listing the command, seed, config hash and the
//! SHA-256 of each input and output. Before a command reads a file that
//! has a sidecar, the file's current hash must match the one recorded
//! there.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// File name without directories, so manifests do not depend on where
    /// a run lives.
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn digest(path: &Path) -> Result<FileDigest, PipelineError> {
    Ok(FileDigest {
        name: file_name(path),
        sha256: sha256_file(path)?,
    })
}

/// Fails when `path` has a sidecar whose recorded hash differs from the
/// file's current content.
pub fn verify_lineage(path: &Path) -> Result<(), PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Data(format!("missing input {}", path.display())));
    }
    let side = sidecar(path);
    let Ok(text) = std::fs::read_to_string(&side) else {
        return Ok(());
    };
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", side.display())))?;
    let name = file_name(path);
    let recorded = manifest
        .outputs
        .iter()
        .find(|d| d.name == name)
        .ok_or_else(|| PipelineError::Data(format!("{} does not list {name}", side.display())))?;
    let actual = sha256_file(path)?;
    if actual != recorded.sha256 {
        return Err(PipelineError::Data(format!(
            "broken lineage: {} changed since `{}` wrote it",
            path.display(),
            manifest.command
        )));
    }
    Ok(())
}

/// Writes the sidecar of every output.
pub fn record(
    command: &str,
    seed: u64,
    config_hash: &str,
    params: BTreeMap<String, serde_json::Value>,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<Manifest, PipelineError> {
    let manifest = Manifest {
        command: command.to_owned(),
        seed,
        config_hash: config_hash.to_owned(),
        params,
        inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
        outputs: outputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    text.push('\n');
    for out in outputs {
        let side = sidecar(out);
        std::fs::write(&side, &text).map_err(|e| PipelineError::io(&side, e))?;
    }
    Ok(manifest)
}
