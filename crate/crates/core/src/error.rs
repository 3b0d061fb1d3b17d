use std::path::PathBuf;

use thiserror::Error;
use tisa_autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {reason}")]
    Domain { op: &'static str, reason: String },
    #[error("{axis} value {value} outside vocabulary range [{lo}, {hi}]")]
    OutOfVocabulary {
        axis: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("scene discarded after {attempts} expert attempts: {reason}")]
    SceneDiscarded { attempts: usize, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("missing input {}", path.display())]
    MissingInput { path: PathBuf },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },
    #[error("io on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 config, 3 missing input, 4 numerical, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::MissingInput { .. } => 3,
            Error::Numerical(_) => 4,
            _ => 1,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::OutOfVocabulary { .. } => "out_of_vocabulary",
            Error::SceneDiscarded { .. } => "scene_discarded",
            Error::Config(_) => "config",
            Error::MissingInput { .. } => "missing_input",
            Error::Numerical(_) => "numerical",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Autodiff(_) => "autodiff",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn domain(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput { path }
        } else {
            Error::Io { path, source }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
