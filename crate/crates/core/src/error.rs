use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("value outside the kernel domain: {0}")]
    Domain(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inadmissible response y = {y} for the {loss} loss")]
    InadmissibleResponse { loss: &'static str, y: f64 },

    #[error("derivative of order {order} is not available for the {loss} loss")]
    NonSmooth { loss: &'static str, order: u8 },

    #[error("numerically singular system: {0}")]
    Singular(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown hypothesis '{0}'")]
    UnknownHypothesis(String),
}

pub type Result<T> = std::result::Result<T, Error>;
