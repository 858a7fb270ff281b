//! Error type carrying the process exit code.

use std::fmt;

/// Exit code for a configuration or validation problem.
pub const EXIT_CONFIG: u8 = 2;
/// Exit code for a failure while running.
pub const EXIT_RUNTIME: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn config(e: impl fmt::Display) -> Self {
        Self { code: EXIT_CONFIG, error: anyhow::anyhow!("{e}") }
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_RUNTIME, error: e.into() }
    }

    /// Library errors that reject the request itself map to exit code 2.
    pub fn from_core(e: spl_depth::Error) -> Self {
        use spl_depth::Error::*;
        match e {
            Config(_) | Params(_) | Scene(_) | Domain(_) | DimensionMismatch { .. } => Self::config(e),
            _ => Self::runtime(e),
        }
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        Self { code: self.code, error: self.error.context(what.to_string()) }
    }
}

impl From<spl_depth::Error> for Failure {
    fn from(e: spl_depth::Error) -> Self {
        Self::from_core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e)
    }
}
