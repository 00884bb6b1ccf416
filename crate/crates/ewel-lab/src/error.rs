//! Harness errors, mapped onto process exit codes:
//! 0 ok, 1 acceptance-threshold miss, 2 config error, 3 numerical fault.

use std::fmt;

#[derive(Debug)]
pub enum LabError {
    Config(String),
    Numerical(String),
    AcceptanceMiss(String),
    Io(std::io::Error),
}

impl fmt::Display for LabError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabError::Config(m) => write!(f, "config error: {m}"),
            LabError::Numerical(m) => write!(f, "numerical fault: {m}"),
            LabError::AcceptanceMiss(m) => write!(f, "acceptance threshold missed: {m}"),
            LabError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for LabError {}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e)
    }
}

impl From<ewel_core::EwelError> for LabError {
    fn from(e: ewel_core::EwelError) -> Self {
        use ewel_core::EwelError as E;
        match e {
            E::Config(_) | E::Argument(_) => LabError::Config(e.to_string()),
            _ => LabError::Numerical(e.to_string()),
        }
    }
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::AcceptanceMiss(_) => 1,
            LabError::Config(_) => 2,
            LabError::Numerical(_) => 3,
            LabError::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
