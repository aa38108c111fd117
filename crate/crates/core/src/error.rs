use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate residual: target and draft distributions coincide")]
    DegenerateResidual,

    #[error("argument {x} outside the domain of the {branch} branch")]
    Domain { branch: &'static str, x: f64 },

    #[error("{0} did not converge within the iteration cap")]
    Convergence(&'static str),

    #[error("malformed packet: {0}")]
    MalformedPacket(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
