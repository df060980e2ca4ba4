use std::process::ExitCode;

use nmt_core::CoreError;
use nmt_corpus::CorpusError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        })
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => CliError::Usage(io.to_string()),
            CorpusError::Io(io) => CliError::Runtime(io.to_string()),
            CorpusError::Format(_) => CliError::Data(e.to_string()),
            CorpusError::Invalid(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Corpus(c) => c.into(),
            CoreError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => CliError::Usage(io.to_string()),
            e if e.is_data_error() => CliError::Data(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
