use std::path::{Path, PathBuf};

use rvinr_core::Error as CoreError;

/// Process exit codes of the command-line driver.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },

    #[error("{path}: payload hash {actual} does not match header hash {expected}")]
    HashMismatch { path: PathBuf, expected: String, actual: String },

    #[error("{path}: payload holds {actual} bytes, header requires {expected}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },

    #[error("{path}: dimension product overflows")]
    DimensionOverflow { path: PathBuf },

    #[error("invalid display window [{lo}, {hi}]")]
    InvalidWindow { lo: f64, hi: f64 },

    #[error("manifest field `{field}`: {message}")]
    Manifest { field: &'static str, message: String },

    #[error("{stage}: {source}")]
    Core { stage: &'static str, source: CoreError },
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn invalid(path: &Path, message: impl Into<String>) -> Self {
        Self::Invalid { path: path.to_path_buf(), message: message.into() }
    }

    pub fn manifest(field: &'static str, message: impl Into<String>) -> Self {
        Self::Manifest { field, message: message.into() }
    }

    pub fn core(stage: &'static str) -> impl FnOnce(CoreError) -> Self {
        move |source| Self::Core { stage, source }
    }

    /// Numerical failures exit with 3, everything else with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core { source, .. } => match source {
                CoreError::NonFinite { .. } | CoreError::NonFiniteActivation { .. } | CoreError::NonFiniteLoss { .. } => {
                    EXIT_NUMERICAL
                }
                _ => EXIT_DATA,
            },
            _ => EXIT_DATA,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
