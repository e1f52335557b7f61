use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// No admissible control from the initial state reaches the target.
    #[error("initially infeasible: {0}")]
    InitiallyInfeasible(String),

    /// A fixed trim sequence admits no durations meeting the endpoint constraint.
    #[error("infeasible sequence {sequence:?}")]
    Infeasible { sequence: Vec<u32> },

    /// The sequence contains only rest trims but the target differs from the start.
    #[error("degenerate sequence {sequence:?}: all trims are rest")]
    Degenerate { sequence: Vec<u32> },

    #[error("MPC loop stalled after {steps} steps")]
    Stalled { steps: usize },

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("unknown trim id {0}")]
    UnknownTrim(u32),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
