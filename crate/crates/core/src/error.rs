use std::path::PathBuf;

use thiserror::Error;

use crate::config::Violation;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("bad value `{value}` for key `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },

    #[error("trader {trader} holds no shares of stock {stock}")]
    NotHeld { trader: usize, stock: usize },

    #[error("ledgers were recorded in per-trader mode; half-cycles are undefined")]
    PerTraderLedger,

    #[error("simulation results were produced with different configurations")]
    MixedConfig,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("step window requires per-step price snapshots")]
    MissingSnapshots,

    #[error("insufficient points: need {needed}, have {have}")]
    InsufficientPoints { needed: usize, have: usize },

    #[error("no positive-F0 region in the scanned range")]
    NoPositiveRegion,

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("sets have unequal sizes")]
    UnequalSets,

    #[error("boundary outside grid: F0 never rises above threshold")]
    BoundaryOutsideGrid,

    #[error("simulation {index} failed: {source}")]
    Simulation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error("worker pool: {0}")]
    WorkerPool(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Write {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Corrupt {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("{}: {}", v.field, v.message))
        .collect::<Vec<_>>()
        .join("; ")
}
