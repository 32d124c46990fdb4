use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
///
/// Variants are grouped so that front ends can map them onto coarse
/// categories (configuration, data, numerical) via [`FavarError::category`].
#[derive(Debug, Error)]
pub enum FavarError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input data: {0}")]
    Data(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("draw {draw}: {source}")]
    AtDraw {
        draw: usize,
        #[source]
        source: Box<FavarError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

impl FavarError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            FavarError::InvalidSpec(_) => ErrorCategory::Config,
            FavarError::Dimension(_) | FavarError::Data(_) | FavarError::Parse(_) => {
                ErrorCategory::Data
            }
            FavarError::Io { .. } => ErrorCategory::Data,
            FavarError::Numerical(_) => ErrorCategory::Numerical,
            FavarError::AtDraw { source, .. } => source.category(),
        }
    }

    pub(crate) fn at_draw(self, draw: usize) -> Self {
        FavarError::AtDraw {
            draw,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        FavarError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, FavarError>;
