use std::path::PathBuf;

use hob::control::ControlError;
use hob::datagen::DataError;
use hob::landscape::LandscapeError;
use hob::simulate::SimError;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {detail}")]
    Config { path: PathBuf, detail: String },
    #[error("{0}")]
    Infeasible(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for anything the caller can fix by changing
    /// flags, files or config, 3 for unmeetable constraints, 4 when the
    /// numerics themselves failed.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Infeasible(_) => EXIT_INFEASIBLE,
            Self::Landscape(e) => landscape_code(e),
            Self::Control(e) => control_code(e),
            Self::Sim(e) => match e {
                SimError::Control(c) => control_code(c),
                SimError::Landscape(l) => landscape_code(l),
                SimError::Shading(_) | SimError::Mca(_) | SimError::UndefinedMc(_) => EXIT_NUMERIC,
                _ => EXIT_USAGE,
            },
            _ => EXIT_USAGE,
        }
    }
}

fn landscape_code(e: &LandscapeError) -> u8 {
    match e {
        LandscapeError::Diverged { .. } | LandscapeError::InvalidParams { .. } => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

fn control_code(e: &ControlError) -> u8 {
    match e {
        ControlError::Bracket { .. } | ControlError::InfeasibleRoi { .. } => EXIT_INFEASIBLE,
        ControlError::NonMonotone { .. } | ControlError::NoConvergence { .. } => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
