//! Append-only record of completed stages for one run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub artifacts: Vec<PathBuf>,
    pub wall_clock_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub records: Vec<StageRecord>,
    #[serde(skip)]
    path: PathBuf,
}

impl RunManifest {
    pub fn open(path: &Path, config_hash: &str) -> CliResult<Self> {
        if !path.exists() {
            return Ok(RunManifest { config_hash: config_hash.into(), records: Vec::new(), path: path.to_path_buf() });
        }
        let text = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let mut m: RunManifest =
            serde_json::from_slice(&text).map_err(|e| CliError::Parse { path: path.into(), detail: e.to_string() })?;
        if m.config_hash != config_hash {
            return Err(CliError::HashMismatch { path: path.into(), found: m.config_hash, expected: config_hash.into() });
        }
        m.path = path.to_path_buf();
        Ok(m)
    }

    /// The latest record for `stage` says it completed.
    pub fn is_complete(&self, stage: &str) -> bool {
        self.records.iter().rev().find(|r| r.stage == stage).is_some_and(|r| r.status == StageStatus::Completed)
    }

    pub fn append(&mut self, record: StageRecord) -> CliResult<()> {
        self.records.push(record);
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        tda_core::checkpoint::write_atomic(&self.path, &bytes)?;
        Ok(())
    }
}
