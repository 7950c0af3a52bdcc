use pfos_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PfosError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config: {0}")]
    Config(String),
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint version mismatch: {0}")]
    Version(String),
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, PfosError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> PfosError + '_ {
    move |source| PfosError::Io { path: path.display().to_string(), source }
}
