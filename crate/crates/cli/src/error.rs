use std::fmt;

use scalematch::Error;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

/// A failed command with its process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { code: EXIT_INTERNAL, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

// Bad inputs (arguments, image shapes) are usage errors; unreadable or
// malformed files are I/O errors; anything else means a broken invariant.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::InvalidArgument(_) | Error::ShapeMismatch(_) => Self::usage(message),
            Error::Io { .. } | Error::Format { .. } => Self::io(message),
            _ => Self::internal(message),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
