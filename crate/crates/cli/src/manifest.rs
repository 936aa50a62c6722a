//! Experiment manifest: every command writes one `manifest.json` listing
//! its resolved-config fingerprint and all output files.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub command: String,
    /// Hash of the resolved configuration; changes iff the config changes.
    pub config_fingerprint: String,
    /// Every file the command wrote, relative to the output directory.
    pub artifacts: Vec<String>,
    /// Seconds since the epoch; honors SOURCE_DATE_EPOCH for reproducible
    /// runs.
    pub timestamp_unix: u64,
}

pub fn fingerprint_of<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn timestamp() -> u64 {
    if let Ok(v) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(t) = v.parse::<u64>() {
            return t;
        }
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Write `manifest.json` into `dir`; artifact paths are sorted for stable
/// bytes.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    config_fingerprint: String,
    artifacts: &[PathBuf],
) -> std::io::Result<()> {
    let mut relative: Vec<String> = artifacts
        .iter()
        .map(|p| {
            p.strip_prefix(dir)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    relative.sort();
    let manifest = ExperimentManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_fingerprint,
        artifacts: relative,
        timestamp_unix: timestamp(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    veracity_core::corpus::atomic_write(&dir.join("manifest.json"), json.as_bytes())
}
