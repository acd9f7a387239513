use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    /// Data covariance could not be factored even after the jitter ladder.
    #[error("singular data covariance ({size}x{size}, estimated rank {rank})")]
    Singular { size: usize, rank: usize },

    #[error("operator annihilates constant fields; mean cannot be concentrated")]
    ZeroSensitivity,

    #[error("negative variance {value:e} at index {index}")]
    InvalidVariance { index: usize, value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("memory budget exceeded: need {needed} bytes, budget {budget} bytes ({what})")]
    Budget {
        what: String,
        needed: u64,
        budget: u64,
    },

    #[error("station {station} lies inside or on cell {cell}")]
    StationInsideCell { station: usize, cell: usize },

    #[error("ensemble and posterior disagree on stage {stage}: {reason}")]
    StageMismatch { stage: usize, reason: String },

    #[error("all candidate sites have been visited")]
    CampaignComplete,

    #[error("bad matrix file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::StationInsideCell { .. } => 2,
            Error::Singular { .. }
            | Error::ZeroSensitivity
            | Error::InvalidVariance { .. }
            | Error::Numerical(_)
            | Error::StageMismatch { .. }
            | Error::CampaignComplete => 3,
            Error::Budget { .. } => 4,
            Error::Format { .. } | Error::Io(_) | Error::Json(_) => 4,
        }
    }
}
