//! Run manifests: the resolved configuration, its hash, seeds, input
//! digests and the artifacts a run wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run-manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
}

/// Collects inputs and artifacts for one run. The hash covers the resolved
/// configuration (without output locations) and the input digests, so it
/// identifies everything that determines the outputs.
pub struct Run {
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn new(command: &str, config: serde_json::Value, out_dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Run {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                config,
                config_hash: String::new(),
                seeds: BTreeMap::new(),
                inputs: BTreeMap::new(),
                artifacts: Vec::new(),
            },
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let digest = file_digest(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Finalizes the hash; call after all inputs and seeds are recorded and
    /// before writing artifacts.
    pub fn seal(&mut self) -> String {
        let body = serde_json::json!({
            "command": self.manifest.command,
            "config": self.manifest.config,
            "seeds": self.manifest.seeds,
            "inputs": self.manifest.inputs,
            "version": self.manifest.version,
        });
        self.manifest.config_hash = sha256_hex(body.to_string().as_bytes());
        self.manifest.config_hash.clone()
    }

    pub fn hash(&self) -> &str {
        &self.manifest.config_hash
    }

    /// `manifest=<hash>` for CSV comment lines.
    pub fn tag(&self) -> String {
        format!("manifest={}", self.manifest.config_hash)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    /// Writes `bytes` to `rel` under the output directory and records it.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(rel);
        Ok(())
    }

    /// Serializes `value` as pretty JSON with a `manifest_hash` field added.
    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> anyhow::Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("manifest_hash".into(), self.manifest.config_hash.clone().into());
        }
        let mut bytes = serde_json::to_vec_pretty(&v)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    pub fn record(&mut self, rel: &str) {
        if !self.manifest.artifacts.iter().any(|a| a == rel) {
            self.manifest.artifacts.push(rel.to_string());
        }
    }

    pub fn finish(mut self) -> anyhow::Result<PathBuf> {
        self.manifest.artifacts.sort();
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        let path = self.out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
