use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one run, written as `manifest.json` next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub version: String,
    pub rng: String,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, params: serde_json::Value) -> Self {
        Self {
            subcommand: subcommand.into(),
            params,
            inputs: Vec::new(),
            seed: None,
            version: VERSION.into(),
            rng: hyspec::simgen::RNG_ALGORITHM.into(),
            outputs: Vec::new(),
            wall_time_seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&mut self, dir: &Path, elapsed: Duration) -> std::io::Result<()> {
        self.wall_time_seconds = elapsed.as_secs_f64();
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(dir.join("manifest.json"), text)
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
