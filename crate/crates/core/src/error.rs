use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field failed validation. `field` is a dotted path.
    #[error("invalid configuration at `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rate for group {group} is negative ({value})")]
    NegativeRate { group: usize, value: f64 },

    #[error("assignment is not rounded: {0}")]
    Unrounded(String),

    #[error("unsupported power model: {0}")]
    Unsupported(String),

    #[error("malformed cone program: {0}")]
    MalformedProgram(String),

    #[error("malformed expansion point: {0}")]
    MalformedState(String),

    #[error("instance exceeds tiny-instance bounds: {0}")]
    TooLarge(String),

    #[error("feasible initial point failed its self-check: {0}")]
    FipCheck(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
