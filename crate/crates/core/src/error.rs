use nmt_corpus::CorpusError;
use nmt_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("contract violated: {0}")]
    Contract(String),
}

impl CoreError {
    /// True for errors caused by bad input data or files rather than by a
    /// failure while running.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            CoreError::Format(_) | CoreError::Corpus(CorpusError::Format(_)) | CoreError::Config(_)
        )
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
