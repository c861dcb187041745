use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-finite loss at step {step}: total = {total}, mf = {mf}, bifm = {bifm}")]
    Diverged {
        step: usize,
        total: f64,
        mf: f64,
        bifm: f64,
    },
    #[error("condition label {label} out of range for a net with {num_labels} labels")]
    Condition { label: usize, num_labels: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
