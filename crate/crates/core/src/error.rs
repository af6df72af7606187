use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension disagreement between tensors.
    #[error("dimension error in {op}: {detail}")]
    Dim { op: &'static str, detail: String },

    /// Invalid configuration (bad sizes, unknown variants, inconsistent options).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed caller input (empty instruction, wrong vector length, ...).
    #[error("input error: {0}")]
    Input(String),

    /// An operation was invoked in a mode that forbids it
    /// (e.g. touching the force sensor during sensor-free inference).
    #[error("mode error: {0}")]
    Mode(String),

    /// A typed-value contract was violated (wrong token kind, frozen drift, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Numerical failure: non-finite values where finite ones are required.
    #[error("numerical error at step {step}: {detail}")]
    Numeric { step: usize, detail: String },

    /// Dataset or checkpoint container problems.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dim {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
