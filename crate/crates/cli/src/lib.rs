//! Scenario runner behind the `polent` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod output;
pub mod scenario;

pub use scenario::Scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("numerical non-convergence: {0}")]
    NonConvergence(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{0}")]
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Io(_) => 4,
            CliError::Model(_) => 1,
        }
    }
}

impl From<polent_core::tomography::TomographyError> for CliError {
    fn from(e: polent_core::tomography::TomographyError) -> Self {
        use polent_core::tomography::TomographyError as T;
        match e {
            T::NotConverged { .. } => CliError::NonConvergence(e.to_string()),
            T::MissingSetting(_) | T::LengthMismatch { .. } | T::NoCounts => CliError::Io(format!("count data: {e}")),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<polent_core::detection::DetectionError> for CliError {
    fn from(e: polent_core::detection::DetectionError) -> Self {
        use polent_core::detection::DetectionError as D;
        match e {
            D::Csv(_) => CliError::Io(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<polent_core::device::DeviceError> for CliError {
    fn from(e: polent_core::device::DeviceError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<polent_core::algebra::AlgebraError> for CliError {
    fn from(e: polent_core::algebra::AlgebraError) -> Self {
        CliError::Model(e.to_string())
    }
}
