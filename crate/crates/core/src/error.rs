use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// The variants split into two families: input problems (`Parse`, `Validation`,
/// `Domain`, `Config`, `Io`) and numerical failures (`Numerical`, `Calibration`,
/// `UndefinedSpread`, `Unattainable`). [`Error::is_input_error`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("calibration did not converge: {0}")]
    Calibration(String),

    #[error("par spread undefined: fee leg is {0}")]
    UndefinedSpread(f64),

    #[error("quote unattainable: {0}")]
    Unattainable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// I/O error that names the file involved.
    pub fn io_at(path: &std::path::Path, e: std::io::Error) -> Self {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    }

    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Domain(_)
                | Error::Config { .. }
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
