use std::io;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    /// Bad, missing or unreadable input data.
    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("I/O error: {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit status. I/O problems count as data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<emofuse::Error> for CliError {
    fn from(e: emofuse::Error) -> Self {
        match e {
            emofuse::Error::Numeric(msg) => CliError::Numeric(msg),
            emofuse::Error::Io(source) => CliError::Io {
                context: "core".into(),
                source,
            },
            other => CliError::Data(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::config("x").exit_code(), 2);
        assert_eq!(CliError::data("x").exit_code(), 3);
        assert_eq!(CliError::io("f", io::Error::other("x")).exit_code(), 3);
        assert_eq!(CliError::from(emofuse::Error::Numeric("nan".into())).exit_code(), 4);
        assert_eq!(CliError::from(emofuse::Error::EmptySequence).exit_code(), 3);
    }
}
