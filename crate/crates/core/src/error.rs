//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Errors surfaced by the simulation, data, and training layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A numeric input that must be finite was NaN or infinite.
    NonFinite(&'static str),
    /// Array/shape disagreement between operands.
    ShapeMismatch(String),
    /// A parameter set violated its construction invariants.
    InvalidParam(String),
    /// A query fell outside its valid domain (e.g. arclength past track end).
    OutOfRange(String),
    /// An input collection was empty or too short for the operation.
    TooShort(&'static str),
    /// A simulation or training run produced a non-finite state.
    Diverged(String),
    /// Incompatible configuration (e.g. observation-mode mismatch).
    Incompatible(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite(what) => write!(f, "non-finite value for {what}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidParam(msg) => write!(f, "invalid parameter: {msg}"),
            Error::OutOfRange(msg) => write!(f, "out of range: {msg}"),
            Error::TooShort(what) => write!(f, "input too short: {what}"),
            Error::Diverged(msg) => write!(f, "diverged: {msg}"),
            Error::Incompatible(msg) => write!(f, "incompatible: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T, E = Error> = core::result::Result<T, E>;
