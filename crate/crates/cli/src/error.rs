//! CLI error carrying the process exit code.
//!
//! Exit code map: 0 ok, 2 usage/malformed input, 3 I/O, 4 numeric failure,
//! 5 missing ground truth.

use artigauss_core::Error as CoreError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    /// Malformed file contents; same class as usage errors.
    pub fn format(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: 4,
            message: message.into(),
        }
    }

    pub fn missing_gt(message: impl Into<String>) -> Self {
        CliError {
            code: 5,
            message: message.into(),
        }
    }

    pub fn into_usage(self) -> Self {
        CliError {
            code: 2,
            message: self.message,
        }
    }
}

impl core::fmt::Display for CliError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match e {
            CoreError::NonFiniteLoss { .. }
            | CoreError::DegenerateRotation
            | CoreError::DegenerateMotion => 4,
            CoreError::MissingGroundTruth => 5,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}
