//! Run manifests: the resolved config snapshot plus provenance, written into
//! the run directory before training begins. The snapshot alone is enough to
//! reproduce the run; timestamps live here and only here, so every other
//! artifact stays byte-identical across reruns.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use amen_core::config::PipelineConfig;
use amen_core::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub created_unix_secs: u64,
    pub seed: u64,
    pub data_dir: String,
    pub output_files: Vec<String>,
    pub config: PipelineConfig,
}

impl RunManifest {
    pub fn new(cfg: &PipelineConfig, data_dir: &Path, output_files: Vec<String>) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seed: cfg.seed,
            data_dir: data_dir.display().to_string(),
            output_files,
            config: cfg.clone(),
        }
    }

    pub fn write(&self, run_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let path = run_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Decode {
            path,
            reason: e.to_string(),
        })
    }
}
