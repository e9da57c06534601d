//! Run manifest: resolved config echo, version, seeds, timestamps, and
//! per-stage status. Written before work starts and finalized on completion,
//! so a crash leaves a manifest whose status is not `complete`.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use mednc_core::error::Result;

use crate::config::RunConfig;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub run_id: String,
    pub status: String,
    pub started_unix: f64,
    #[serde(default)]
    pub finished_unix: Option<f64>,
    pub seed: u64,
    pub base_seed: u64,
    pub stages: Vec<StageStatus>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub status: String,
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub struct ManifestWriter {
    path: PathBuf,
    manifest: RunManifest,
}

impl ManifestWriter {
    /// Create the manifest with status `running` and write it immediately.
    pub fn start(dir: &Path, config: &RunConfig, stages: &[&str]) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let manifest = RunManifest {
            artifact_version: ARTIFACT_VERSION.to_string(),
            run_id: config.run_id.clone(),
            status: "running".to_string(),
            started_unix: now_unix(),
            finished_unix: None,
            seed: config.seed,
            base_seed: config.base_seed(),
            stages: stages
                .iter()
                .map(|s| StageStatus {
                    stage: s.to_string(),
                    status: "pending".to_string(),
                })
                .collect(),
            config: config.clone(),
        };
        let writer = ManifestWriter {
            path: dir.join("manifest.json"),
            manifest,
        };
        writer.write()?;
        Ok(writer)
    }

    pub fn stage_done(&mut self, stage: &str) -> Result<()> {
        for s in &mut self.manifest.stages {
            if s.stage == stage {
                s.status = "done".to_string();
            }
        }
        self.write()
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.status = "complete".to_string();
        self.manifest.finished_unix = Some(now_unix());
        self.write()
    }

    fn write(&self) -> Result<()> {
        std::fs::write(&self.path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }
}
