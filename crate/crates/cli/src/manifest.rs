//! Run manifest written atomically alongside every output set.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub engine_version: String,
    pub seed: u64,
    pub created_utc: String,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_path: &Path,
        seed: u64,
        input_paths: &[PathBuf],
    ) -> Result<Self, CliError> {
        let mut inputs = Vec::new();
        for p in input_paths {
            inputs.push(InputHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            });
        }
        Ok(Self {
            command: command.to_string(),
            config_path: config_path.display().to_string(),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            created_utc: chrono::Utc::now().to_rfc3339(),
            inputs,
            outputs: Vec::new(),
        })
    }

    /// Writes `manifest.json` via a temp file + rename.
    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("manifest serialization failed: {e}")))?;
        let tmp = out_dir.join("manifest.json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, out_dir.join("manifest.json"))?;
        Ok(())
    }
}
