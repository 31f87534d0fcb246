use std::fmt;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_PIPELINE: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_CONFIG: u8 = 78;

/// A command failure, printed as `error: <code>: <message>`.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit: u8,
}

impl CliError {
    pub fn new(code: impl Into<String>, message: impl Into<String>, exit: u8) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            exit,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message, EXIT_USAGE)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message, EXIT_CONFIG)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new("io", message, EXIT_FAILURE)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new("data", message, EXIT_FAILURE)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Keep it on one line so callers can parse it.
        let message = self.message.replace('\n', " ");
        write!(f, "error: {}: {}", self.code, message)
    }
}

impl std::error::Error for CliError {}
