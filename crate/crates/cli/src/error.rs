use std::path::{Path, PathBuf};

use extinction::law::LawError;
use extinction::markov::MarkovError;
use extinction::quad::QuadError;
use extinction::{BaxterError, DistError, SimError, StatsError};
use thiserror::Error;

/// Process exit codes.
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_COST_GUARD: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    CostGuard(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::CostGuard(_) => EXIT_COST_GUARD,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<DistError> for CliError {
    fn from(e: DistError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<QuadError> for CliError {
    fn from(e: QuadError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<LawError> for CliError {
    fn from(e: LawError) -> Self {
        match e {
            LawError::QuadratureFailure(_) | LawError::BracketFailure(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<BaxterError> for CliError {
    fn from(e: BaxterError) -> Self {
        match e {
            BaxterError::TooManyStates { .. } => CliError::CostGuard(format!("{e}; pass --force to run anyway")),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MarkovError> for CliError {
    fn from(e: MarkovError) -> Self {
        match e {
            MarkovError::NotConverged { .. } => CliError::Numerical(e.to_string()),
            MarkovError::Law(l) => l.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
