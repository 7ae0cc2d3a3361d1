use std::path::{Path, PathBuf};

use gcvae::data::SplitIndices;
use gcvae::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.log";
pub const CHECKPOINT: &str = "checkpoint.final";
pub const SNAPSHOTS: &str = "snapshots";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataFingerprint {
    pub path: PathBuf,
    pub rows: usize,
    pub columns: Vec<String>,
    pub guide_columns: Vec<String>,
    pub label_column: Option<String>,
    pub sha256: String,
}

impl DataFingerprint {
    pub fn of(
        path: &Path,
        rows: usize,
        columns: Vec<String>,
        guide_columns: Vec<String>,
        label_column: Option<String>,
    ) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let sha256 = Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        Ok(DataFingerprint {
            path: path.to_path_buf(),
            rows,
            columns,
            guide_columns,
            label_column,
            sha256,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitRecord {
    pub fractions: (f64, f64, f64),
    pub indices: SplitIndices,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Timings {
    pub pretrain_s: Option<f64>,
    pub init_gmm_s: Option<f64>,
    pub train_s: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Artifacts {
    pub metrics: String,
    pub checkpoint: String,
    pub snapshots: Option<String>,
}

/// Everything needed to reproduce and audit a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub status: RunStatus,
    pub config: TrainConfig,
    pub data: DataFingerprint,
    pub split: SplitRecord,
    pub artifacts: Artifacts,
    pub timings: Timings,
    pub warnings: Vec<String>,
    pub final_val_acc: Option<f64>,
    pub final_val_nmi: Option<f64>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Usage(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}
