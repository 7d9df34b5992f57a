//! Run manifest: what ran, on which config bytes, with which seed.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the raw config bytes; stable across platforms.
    pub config_digest: String,
    pub version: String,
    pub seed: u64,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: String, seed: u64, wall: Duration) -> Self {
        RunManifest {
            command: command.to_string(),
            config_digest,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            wall_seconds: wall.as_secs_f64(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) {
        if let Ok(json) = serde_json::to_string_pretty(self) {
            let _ = std::fs::write(path, json + "\n");
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
