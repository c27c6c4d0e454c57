//! Content hashes and the run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Cache key of a stage: its name, parameters and the hashes of its inputs.
pub fn stage_key(stage: &str, params: &Value, inputs: &BTreeMap<String, String>) -> String {
    let doc = serde_json::json!({ "stage": stage, "params": params, "inputs": inputs });
    sha256_hex(doc.to_string().as_bytes())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    pub params: Value,
    /// Artifact name to content hash.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    /// The manifest in `dir`, or an empty one when there is none yet.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).with_context(|| format!("corrupt manifest {}", path.display()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::rename(&tmp, dir.join(MANIFEST))?;
        Ok(())
    }

    /// Whether `stage` completed with `key` and its outputs are unchanged on disk.
    pub fn is_fresh(&self, dir: &Path, stage: &str, key: &str) -> bool {
        let Some(rec) = self.stages.get(stage) else { return false };
        rec.key == key
            && rec.outputs.iter().all(|(name, h)| file_hash(&dir.join(name)).is_ok_and(|got| &got == h))
    }
}

/// An input artifact a stage needs is absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingArtifact {
    pub stage: String,
    pub artifact: String,
    /// CLI subcommand that produces the artifact.
    pub producer: String,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage `{}` needs `{}`, which does not exist yet; run `safedpa {}` first",
            self.stage, self.artifact, self.producer
        )
    }
}

impl std::error::Error for MissingArtifact {}
