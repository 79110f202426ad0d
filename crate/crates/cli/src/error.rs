use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Rejected before any computation; exit code 2.
    #[error("invalid config: {0}")]
    Config(String),
    /// An audit or criterion ran and failed; exit code 1.
    #[error("audit failed: {0}")]
    Audit(String),
    #[error(transparent)]
    Core(#[from] nlad_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "invalid-config",
            CliError::Audit(_) => "audit-failure",
            CliError::Core(_) => "numerics",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }

    pub fn record(&self, command: &str) -> ErrorRecord {
        ErrorRecord {
            command: command.to_string(),
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

/// Machine-readable failure, written as `error.json` and echoed on stderr.
#[derive(Clone, Debug, Serialize)]
pub struct ErrorRecord {
    pub command: String,
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl ErrorRecord {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("plain record");
        std::fs::write(dir.join("error.json"), text)
    }
}
