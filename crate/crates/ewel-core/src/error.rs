//! Error taxonomy shared by the numerical modules.
//!
//! Three kinds of failure are distinguished because they map to different
//! exit codes in the experiment harness: bad configuration (rejected before
//! any work starts), bad call arguments (domain violations), and numerical
//! faults detected mid-computation.

use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum EwelError {
    /// Invalid configuration: bad quadrature resolution, overlapping
    /// discontinuity neighborhoods, exponent constraints like `q <= d`, ...
    Config(String),
    /// An argument outside the operation's domain.
    Argument(String),
    /// A state blew up during path simulation; carries the offending path
    /// and step so the run can be replayed.
    NonFiniteState { path: usize, step: usize },
    /// A covariance matrix that should be symmetric positive definite is not
    /// (the model violates uniform ellipticity at the queried point).
    NotSpd(String),
    /// A quadrature sampled a non-finite integrand value.
    NonFiniteIntegrand { time: f64, location: f64 },
}

impl fmt::Display for EwelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EwelError::Config(msg) => write!(f, "configuration error: {msg}"),
            EwelError::Argument(msg) => write!(f, "argument error: {msg}"),
            EwelError::NonFiniteState { path, step } => {
                write!(f, "non-finite state at path {path}, step {step}")
            }
            EwelError::NotSpd(msg) => write!(f, "covariance not SPD: {msg}"),
            EwelError::NonFiniteIntegrand { time, location } => {
                write!(f, "non-finite integrand at t={time}, z={location}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EwelError {}

pub type Result<T> = core::result::Result<T, EwelError>;
