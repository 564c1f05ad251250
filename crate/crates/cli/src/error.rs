use std::path::Path;

use serde_json::json;

use crate::SCHEMA_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error{}: {message}", key.as_ref().map(|k| format!(" at `{k}`")).unwrap_or_default())]
    Config { key: Option<String>, message: String },

    #[error("model error: {0}")]
    Model(#[from] pdmp::Error),

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn config(key: &str, message: impl Into<String>) -> Self {
        CliError::Config { key: Some(key.to_string()), message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "ConfigError",
            CliError::Model(_) => "ModelError",
            CliError::Io { .. } => "IoError",
        }
    }

    /// Machine-readable form written to stderr on failure.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({
            "schema_version": SCHEMA_VERSION,
            "error": self.kind(),
            "message": self.to_string(),
        });
        if let CliError::Config { key: Some(k), .. } = self {
            v["key"] = json!(k);
        }
        v
    }
}
