use std::fmt;
use std::io;

/// Exit status plus a message for standard error.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    /// Prefixes the message with the file or step that failed.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<clsood::Error> for CliError {
    fn from(e: clsood::Error) -> Self {
        use clsood::Error as E;
        let code = match &e {
            E::Io(io) if io.kind() == io::ErrorKind::NotFound => EXIT_USAGE,
            E::EmptyInput
            | E::ConfigInvariantViolation(_)
            | E::InvalidGrid
            | E::InvalidLevel(_)
            | E::UnknownMethod(_)
            | E::UnknownBaseline(_)
            | E::InvalidNeighbors { .. }
            | E::InvalidShrinkage(_)
            | E::NonPositiveTemperature(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        clsood::Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
