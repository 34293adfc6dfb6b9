use std::path::PathBuf;

use thiserror::Error;

/// Raised when a field quantity is requested where the density is below the
/// node threshold and the phase gradient is ill-defined.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("node singularity at x = {x} Å, t = {t} fs (density {density:e} Å⁻¹)")]
pub struct NodeSingularity {
    pub x: f64,
    pub t: f64,
    pub density: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid eigenstate index {0}; indices start at 1")]
    InvalidIndex(i64),

    #[error("position {x} Å lies outside the box [0, {length}]")]
    OutOfDomain { x: f64, length: f64 },

    #[error(transparent)]
    Node(#[from] NodeSingularity),

    #[error("probability {0} lies outside [0, 1]")]
    ProbabilityDomain(f64),

    #[error("density is stationary: {0}")]
    NoPeriod(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("potential grid format: {0}")]
    Format(String),

    #[error("requested {requested} levels but a grid of {points} points supports at most {max}")]
    Capacity {
        requested: usize,
        points: usize,
        max: usize,
    },

    #[error("non-finite position at t = {t} fs, x = {x} (seed {seed}, particle {particle}, step {step})")]
    NumericalFailure {
        t: f64,
        x: f64,
        seed: u64,
        particle: u64,
        step: u64,
    },

    #[error("particle {index}: {source}")]
    Particle {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("validation: {0}")]
    Validation(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
