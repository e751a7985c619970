use std::path::Path;

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("file not found: {path}")]
    MissingFile { path: String },
    #[error("invalid config {path}: {message}")]
    Config { path: String, message: String },
    #[error("refusing to overwrite existing output {path}")]
    Exists { path: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Compute(#[from] pairsim::Error),
}

impl CliError {
    pub fn from_io(path: &Path, e: std::io::Error) -> Self {
        let path = path.display().to_string();
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile { path }
        } else {
            CliError::Io { path, source: e }
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Compute(_) | CliError::Io { .. } => 1,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingFile { .. } => "missing-file",
            CliError::Config { .. } => "config",
            CliError::Exists { .. } => "output-exists",
            CliError::Io { .. } => "io",
            CliError::Compute(e) => match e {
                pairsim::Error::Domain(_) => "domain",
                pairsim::Error::Resolution(_) => "resolution",
                pairsim::Error::Coverage(_) => "coverage",
                pairsim::Error::Truncation(_) => "truncation",
                pairsim::Error::Fit(_) => "fit",
                pairsim::Error::Format(_) => "format",
                pairsim::Error::Ordering { .. } => "ordering",
                pairsim::Error::Truncated(_) => "truncated",
                pairsim::Error::Io(_) => "io",
            },
        }
    }

    fn path(&self) -> Option<&str> {
        match self {
            CliError::MissingFile { path }
            | CliError::Config { path, .. }
            | CliError::Exists { path }
            | CliError::Io { path, .. } => Some(path),
            _ => None,
        }
    }

    pub fn record(&self) -> serde_json::Value {
        json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "path": self.path(),
            },
            "exit_code": self.exit_code(),
        })
    }
}
