use thiserror::Error;

/// Errors raised by the loss stack, the renderer and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, invalid parameter, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// An experiment config could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),
    /// Optimization produced a non-finite loss.
    #[error("numerical divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error("malformed {format} data: {detail}")]
    Format { format: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
