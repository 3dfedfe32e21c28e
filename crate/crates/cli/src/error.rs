use std::fmt;

use semhash_core::Error;

/// A failure that ends the process: exit status 2 for usage and config
/// problems, 1 for everything that goes wrong at runtime.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub exit: i32,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError { code: "E_USAGE", exit: 2, msg: msg.into() }
    }

    pub fn config(key: &str, msg: impl fmt::Display) -> Self {
        CliError { code: "E_CONFIG", exit: 2, msg: format!("key `{key}`: {msg}") }
    }

    pub fn runtime(code: &'static str, msg: impl Into<String>) -> Self {
        CliError { code, exit: 1, msg: msg.into() }
    }

    /// The single line printed to stderr.
    pub fn line(&self) -> String {
        let msg = self.msg.replace(['\n', '\r'], " ");
        format!("error code={} msg={}", self.code, msg)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { key, msg } => return CliError::config(key, msg),
            Error::Parse { .. } => "E_PARSE",
            Error::Validation(_) => "E_VALIDATION",
            Error::Shape(_) => "E_SHAPE",
            Error::NonFiniteGradient { .. } | Error::Numeric(_) => "E_NUMERIC",
            Error::InvalidLabel { .. } => "E_LABEL",
            Error::UnknownToken(_) => "E_UNKNOWN_TOKEN",
            Error::Format(_) => "E_FORMAT",
            Error::Diverged(_) => "E_DIVERGED",
            Error::Io(_) => "E_IO",
        };
        CliError::runtime(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime("E_IO", e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
