use std::path::PathBuf;

use fieldflow::dynamics::DynamicsError;
use thiserror::Error;

use crate::expr::ExprError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("star and dagger runs diverged by {difference:e} at t = {t}")]
    RepresentationMismatch { difference: f64, t: f64 },
    #[error("convergence target missed for: {}", .0.join(", "))]
    ConvergenceMissed(Vec<String>),
    #[error("invariant checks failed: {}", .0.join(", "))]
    ChecksFailed(Vec<String>),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } | CliError::Config(_) | CliError::Toml(_) | CliError::Expr(_) => 2,
            CliError::Dynamics(e) => match e {
                DynamicsError::Cfl { .. } | DynamicsError::NonFinite { .. } | DynamicsError::Lagrangian(_) => 3,
                _ => 2,
            },
            CliError::RepresentationMismatch { .. } => 3,
            CliError::ConvergenceMissed(_) | CliError::ChecksFailed(_) => 4,
            CliError::Write { .. } | CliError::Csv(_) => 1,
        }
    }
}
