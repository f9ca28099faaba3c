use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two particles occupy the same point; the kernel is singular there.
    #[error("zero separation between particles (collision)")]
    ZeroSeparation,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing assumption constants: {0}")]
    MissingConstants(&'static str),

    #[error("drift bound fit infeasible: {0}")]
    InfeasibleFit(String),

    #[error("not enough samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("step failed at t = {time} after {halvings} halvings")]
    StepFailure { time: f64, halvings: u32 },

    #[error("log W = {log_w} exceeded the cap at t = {time}")]
    CapHit { time: f64, log_w: f64 },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("bad checkpoint format: {0}")]
    Format(String),

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u8, found: u8 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures of the numerical integration itself (as opposed
    /// to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroSeparation
                | Error::StepFailure { .. }
                | Error::CapHit { .. }
                | Error::InfeasibleFit(_)
                | Error::DegenerateSeries(_)
        )
    }

    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidKernel(_)
                | Error::InvalidConfig(_)
                | Error::MissingConstants(_)
                | Error::InsufficientSamples { .. }
                | Error::DimensionMismatch { .. }
                | Error::EmptyEnsemble
                | Error::Parse { .. }
                | Error::Validation { .. }
        )
    }
}
