use alloc::string::String;

/// Errors produced by the simulator core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A knob or precondition is invalid (bad threshold, λη_l ≥ 1, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Two layered vectors do not share the same layout.
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    /// Input data is unusable (non-finite values, empty dataset, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Noise calibration could not reach the requested target.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// A query was made against state that cannot answer it.
    #[error("query error: {0}")]
    Query(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn layout(msg: impl Into<String>) -> Self {
        Error::LayoutMismatch(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
