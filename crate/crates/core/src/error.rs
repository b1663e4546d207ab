use thiserror::Error;

use crate::expr::{EvalError, ParseError};

/// Crate-wide error type.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("delay mismatch: T = {horizon} but N*h = {expected}")]
    DelayMismatch { horizon: f64, expected: f64 },

    #[error("invalid impulsive control: {0}")]
    InvalidControl(String),

    #[error("time change is not monotone: {0}")]
    NotMonotone(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("state blow-up in {context}: |y| = {magnitude:e} exceeds {bound:e}")]
    BlowUp {
        context: String,
        magnitude: f64,
        bound: f64,
    },

    #[error("step {step} does not divide breakpoint interval of length {interval}")]
    StepMisaligned { step: f64, interval: f64 },

    #[error("epsilon {epsilon} too large: must be below {limit}")]
    EpsilonTooLarge { epsilon: f64, limit: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("no progress: {0}")]
    NoProgress(String),

    #[error("underdetermined: {0}")]
    UnderDetermined(String),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse(ParseError::Syntax { .. }) => "SyntaxError",
            Error::Parse(ParseError::Index { .. }) => "IndexError",
            Error::Eval(_) => "DomainError",
            Error::Schema(_) => "SchemaError",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::DelayMismatch { .. } => "DelayMismatch",
            Error::InvalidControl(_) => "InvalidControl",
            Error::NotMonotone(_) => "NotMonotone",
            Error::Range(_) => "RangeError",
            Error::BlowUp { .. } => "BlowUp",
            Error::StepMisaligned { .. } => "StepMisaligned",
            Error::EpsilonTooLarge { .. } => "EpsilonTooLarge",
            Error::Infeasible(_) => "Infeasible",
            Error::NoProgress(_) => "NoProgress",
            Error::UnderDetermined(_) => "UnderDetermined",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
