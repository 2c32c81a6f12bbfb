//! Run manifests: what a run was given and what it wrote, hashed so report
//! rows can point back to the exact run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{sha256_hex, PromptEngine, PromptTemplateId};
use crate::task::CreatedCounts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub rng_seed: u64,
    pub task_ids: Vec<String>,
    /// Template file name to SHA-256 of the text actually used.
    pub template_digests: BTreeMap<String, String>,
    /// Effective configuration after defaults and overrides.
    pub config: serde_json::Value,
    #[serde(default)]
    pub counts: BTreeMap<String, CreatedCounts>,
    /// Output path relative to the run directory, to SHA-256 of its bytes.
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Command-specific records such as a task split or a raw-generation digest.
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
    /// Hash of this manifest with this field unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, rng_seed: u64, engine: &PromptEngine, config: serde_json::Value) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            rng_seed,
            task_ids: Vec::new(),
            template_digests: PromptTemplateId::ALL
                .iter()
                .map(|&id| (id.file_name().to_string(), engine.digest(id)))
                .collect(),
            config,
            counts: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            warnings: Vec::new(),
            extra: serde_json::Map::new(),
            manifest_hash: None,
        }
    }

    pub fn record_artifact(&mut self, relative: &str, bytes: &[u8]) {
        self.artifacts.insert(relative.replace('\\', "/"), sha256_hex(bytes));
    }

    /// SHA-256 over the compact JSON form with `manifest_hash` cleared.
    pub fn compute_hash(&self) -> Result<String> {
        let unhashed = RunManifest {
            manifest_hash: None,
            ..self.clone()
        };
        Ok(sha256_hex(serde_json::to_string(&unhashed)?.as_bytes()))
    }

    /// Fills in `manifest_hash` and returns it.
    pub fn seal(&mut self) -> Result<String> {
        let hash = self.compute_hash()?;
        self.manifest_hash = Some(hash.clone());
        Ok(hash)
    }

    pub fn to_pretty_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pretty_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        crate::task::decode_json(&text, &path.display().to_string())
    }

    /// Checks the stored hash against the content.
    pub fn verify(&self) -> Result<bool> {
        Ok(self.manifest_hash.as_deref() == Some(self.compute_hash()?.as_str()))
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_and_verify() {
        let engine = PromptEngine::default();
        let mut m = RunManifest::new("synthesize", 7, &engine, serde_json::json!({"k": 1}));
        m.record_artifact("dataset.jsonl", b"{}\n");
        let hash = m.seal().unwrap();
        assert_eq!(hash.len(), 64);
        assert!(m.verify().unwrap());
        let mut tampered = m.clone();
        tampered.rng_seed = 8;
        assert!(!tampered.verify().unwrap());
        assert_eq!(m.template_digests.len(), 3);
    }
}
