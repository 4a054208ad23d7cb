use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where in an input file a parse failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    ByteOffset(usize),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::ByteOffset(o) => write!(f, "byte offset {o}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },

    #[error("invalid Gaussian {index}: {message}")]
    InvalidGaussian { index: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no Gaussians match prompt {0}")]
    EmptyChannel(usize),

    #[error("query grounded to nothing (prompt {0})")]
    GroundedToNothing(usize),

    #[error("channel {index} is not populated (cloud has {available} prompt channels)")]
    UnpopulatedChannel { index: usize, available: usize },

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("derivative order {0} not supported (max 3)")]
    DerivativeOrder(usize),

    #[error("singular basis matrix: {0}")]
    SingularBasis(String),

    #[error("camera center coincides with the object centroid")]
    CameraAtObject,

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse_line(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: Location::Line(line),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::SingularBasis(_) | Error::CameraAtObject
        )
    }
}
