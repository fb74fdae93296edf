//! `manifest.json`: one per output directory, one record per run. A file
//! rewritten by a later run moves to that run's record, so each output is
//! referenced exactly once.

use std::collections::BTreeMap;
use std::path::Path;

use mfbm_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_NAME: &str = "manifest.json";

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// The effective configuration (defaults filled in) plus `delta/eps` per pair.
pub(crate) fn effective_config(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(cfg)?;
    let pairs: Vec<_> = cfg
        .scale_pairs()
        .into_iter()
        .map(|(e, d, r)| serde_json::json!({"epsilon": e, "delta": d, "delta_over_epsilon": r}))
        .collect();
    v["scale_pairs"] = serde_json::Value::Array(pairs);
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    #[serde(default)]
    pub config_path: Option<String>,
    /// SHA-256 of the configuration file bytes.
    #[serde(default)]
    pub config_hash: Option<String>,
    pub seed: u64,
    /// Where the seed came from: `config`, `env`, `flag` or `default`.
    pub seed_source: String,
    pub versions: BTreeMap<String, String>,
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        command: &str,
        config: Option<(&Path, &str)>,
        seed: u64,
        seed_source: &str,
        effective: Option<serde_json::Value>,
        dir: &Path,
        files: &[std::path::PathBuf],
        error: Option<&Error>,
    ) -> Self {
        let versions = [
            ("mfbm-core", mfbm_core::VERSION),
            ("mfbm-cli", env!("CARGO_PKG_VERSION")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let outputs = files
            .iter()
            .filter(|p| p.exists())
            .map(|p| p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned())
            .collect();
        Self {
            command: command.to_string(),
            config_path: config.map(|(p, _)| p.display().to_string()),
            config_hash: config.map(|(_, h)| h.to_string()),
            seed,
            seed_source: seed_source.to_string(),
            versions,
            config: effective,
            outputs,
            status: if error.is_some() { "failed" } else { "ok" }.to_string(),
            error: error.map(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub runs: Vec<RunRecord>,
}

impl Manifest {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let p = dir.as_ref().join(MANIFEST_NAME);
        if !p.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    /// Appends `record`, removing its outputs from earlier records.
    pub fn record(dir: impl AsRef<Path>, record: RunRecord) -> Result<()> {
        let dir = dir.as_ref();
        let mut m = Self::read(dir).unwrap_or_default();
        m.runs.retain_mut(|r| {
            let before = r.outputs.len();
            r.outputs.retain(|o| !record.outputs.contains(o));
            // drop records whose every output has been superseded
            before == 0 || !r.outputs.is_empty()
        });
        m.runs.push(record);
        std::fs::write(dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }

    /// Every output path across all runs.
    pub fn outputs(&self) -> Vec<&str> {
        self.runs.iter().flat_map(|r| r.outputs.iter().map(String::as_str)).collect()
    }
}
