//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Failures while building or querying a Kanerva coder.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoderError {
    #[error("invalid coder config: {0}")]
    InvalidConfig(String),
    #[error("observation has {got} coordinates, coder expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("observation coordinate {index} = {value} lies outside [0, 1)")]
    OutOfRange { index: usize, value: f64 },
    #[error("prototype file: {0}")]
    Persist(String),
}

/// Faults raised by a single learner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
    #[error("feature index {index} out of range for {len} features")]
    FeatureOutOfRange { index: usize, len: usize },
    #[error("feature vector has logical length {got}, learner has {expected} features")]
    LengthMismatch { expected: usize, got: usize },
    /// A non-finite TD error, weight, or meta-parameter appeared.
    #[error("learner diverged: non-finite {quantity}{}", index.map(|i| format!(" at feature {i}")).unwrap_or_default())]
    Diverged {
        quantity: &'static str,
        index: Option<usize>,
    },
    #[error("internal invariant violated: normalizer at feature {index} is negative ({value})")]
    NegativeNormalizer { index: usize, value: f64 },
}

impl LearnerError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, LearnerError::Diverged { .. })
    }
}

/// Faults raised by a horde; learner faults carry the GVF index.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HordeError {
    #[error("invalid horde: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Coder(#[from] CoderError),
    #[error("GVF {gvf}: {source}")]
    Learner {
        gvf: usize,
        #[source]
        source: LearnerError,
    },
}

impl HordeError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, HordeError::Learner { source, .. } if source.is_divergence())
    }

    pub fn gvf(&self) -> Option<usize> {
        match self {
            HordeError::Learner { gvf, .. } => Some(*gvf),
            _ => None,
        }
    }
}

/// Problems with sensor stream data and channel metadata.
#[derive(Debug, Error)]
pub enum StreamError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("invalid channel metadata: {0}")]
    InvalidMeta(String),
    #[error("invalid stream: {0}")]
    InvalidStream(String),
    #[error("invalid failure spec: {0}")]
    InvalidFailure(String),
}

/// Problems in offline evaluation inputs.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("period boundary {end} exceeds series length {len}")]
    BoundaryOverflow { end: usize, len: usize },
}

/// Top-level error for experiment orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Coder(#[from] CoderError),
    #[error(transparent)]
    Horde(#[from] HordeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Report(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Horde(h) if h.is_divergence())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
