use std::path::Path;

/// Failure classes, each with its process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// A required file or checkpoint does not exist (exit 2).
    Missing,
    /// An input exists but cannot be decoded or is malformed (exit 3).
    BadInput,
    /// A pipeline invariant or contract failed (exit 4).
    Invariant,
    Other,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn missing(m: impl Into<String>) -> Self {
        Self::new(ErrorKind::Missing, m)
    }

    pub fn bad_input(m: impl Into<String>) -> Self {
        Self::new(ErrorKind::BadInput, m)
    }

    pub fn invariant(m: impl Into<String>) -> Self {
        Self::new(ErrorKind::Invariant, m)
    }

    pub fn other(m: impl Into<String>) -> Self {
        Self::new(ErrorKind::Other, m)
    }

    pub fn from_io(path: &Path, e: std::io::Error) -> Self {
        let kind = if e.kind() == std::io::ErrorKind::NotFound {
            ErrorKind::Missing
        } else {
            ErrorKind::Other
        };
        Self::new(kind, format!("{}: {e}", path.display()))
    }

    pub fn context(self, what: impl std::fmt::Display) -> Self {
        CliError {
            kind: self.kind,
            message: format!("{what}: {}", self.message),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Missing => 2,
            ErrorKind::BadInput => 3,
            ErrorKind::Invariant => 4,
            ErrorKind::Other => 1,
        }
    }
}

impl From<delight_core::Error> for CliError {
    fn from(e: delight_core::Error) -> Self {
        CliError::invariant(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::bad_input(e.to_string())
    }
}
