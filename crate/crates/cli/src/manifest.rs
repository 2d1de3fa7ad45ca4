use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::commands::{CliError, CliResult};

/// Written next to every command's outputs. Timestamps live here, never in
/// report files, so reports stay byte-identical across reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, enough to replay the command.
    pub args: Vec<String>,
    pub config_path: Option<String>,
    pub config: serde_json::Value,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, config: serde_json::Value, started_unix: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().collect(),
            config_path: config_path.map(|p| p.display().to_string()),
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix,
            finished_unix: now_unix(),
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_text(&dir.join("manifest.json"), &serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: &Path) -> CliResult<RunManifest> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
