//! Experiment orchestration for the flow laboratory: configs, pipelines,
//! checkpoints and plot data.

pub mod config;
pub mod output;
pub mod pipelines;

use std::fmt;

#[derive(Debug)]
pub enum LabError {
    Config(String),
    MissingInput(String),
    Numeric(hmcf_core::Error),
    Io(String),
}

impl fmt::Display for LabError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabError::Config(s) => write!(f, "config error: {s}"),
            LabError::MissingInput(s) => write!(f, "missing input: {s}"),
            LabError::Numeric(e) => write!(f, "numeric failure: {e}"),
            LabError::Io(s) => write!(f, "i/o error: {s}"),
        }
    }
}

impl std::error::Error for LabError {}

impl From<hmcf_core::Error> for LabError {
    fn from(e: hmcf_core::Error) -> Self {
        match e {
            hmcf_core::Error::Usage(s) => LabError::Config(s),
            e => LabError::Numeric(e),
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::MissingInput(_) => EXIT_CONFIG,
            LabError::Numeric(_) | LabError::Io(_) => EXIT_NUMERIC,
        }
    }
}
