use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use semgen::{Error, Result};
use serde::{Deserialize, Serialize};

pub const RUN_RECORD: &str = "run.json";

/// Provenance of one CLI invocation, written as `run.json` in its output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: Option<String>,
    pub artifacts: Vec<PathBuf>,
    pub error: Option<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunRecord {
    pub fn start(command: &str) -> Self {
        RunRecord {
            command: command.to_string(),
            config_hash: None,
            seed: None,
            started: now(),
            finished: None,
            artifacts: Vec::new(),
            error: None,
        }
    }

    pub fn finish(&mut self, out: &Path, error: Option<&Error>) -> Result<()> {
        self.finished = Some(now());
        self.error = error.map(|e| e.to_string());
        let path = out.join(RUN_RECORD);
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(&path, json).map_err(|e| Error::Io { path, source: e })
    }
}
