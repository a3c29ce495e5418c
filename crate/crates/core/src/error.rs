use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A dataset needs at least one row and one feature.
    EmptyDataset,
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    /// Non-finite value at (row, column); column `None` means the response.
    NonFinite {
        row: usize,
        column: Option<usize>,
    },
    /// A feature value outside the unit cube was handed to a fitter that
    /// expects normalized input.
    OutOfDomain {
        row: usize,
        column: usize,
        value: f64,
    },
    TooFewSamples {
        samples: usize,
        min_leaf: usize,
    },
    InvalidConfig(String),
    InvalidDirection(String),
    UnknownFunction(String),
    SamplerExhausted {
        attempts: usize,
    },
    MissingCapability {
        measure: &'static str,
        capability: &'static str,
    },
    InvalidBounds {
        coordinate: usize,
    },
    NotPositiveSemidefinite {
        min_eigenvalue: f64,
    },
    NotOrthonormal,
    InvalidTree(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyDataset => write!(f, "dataset must have at least one row and one feature"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::NonFinite { row, column: Some(c) } => {
                write!(f, "non-finite feature value at row {row}, column {c}")
            }
            Error::NonFinite { row, column: None } => {
                write!(f, "non-finite response at row {row}")
            }
            Error::OutOfDomain { row, column, value } => write!(
                f,
                "feature value {value} at row {row}, column {column} lies outside [0, 1]; normalize first"
            ),
            Error::TooFewSamples { samples, min_leaf } => write!(
                f,
                "{samples} samples cannot be split with at least {min_leaf} per leaf"
            ),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::InvalidDirection(msg) => write!(f, "invalid direction vector: {msg}"),
            Error::UnknownFunction(name) => write!(f, "unknown synthetic function `{name}`"),
            Error::SamplerExhausted { attempts } => write!(
                f,
                "truncated-normal sampler rejected {attempts} consecutive draws"
            ),
            Error::MissingCapability { measure, capability } => {
                write!(f, "the {measure} measure cannot {capability}")
            }
            Error::InvalidBounds { coordinate } => {
                write!(f, "lower bound exceeds upper bound in coordinate {coordinate}")
            }
            Error::NotPositiveSemidefinite { min_eigenvalue } => write!(
                f,
                "matrix is not positive semidefinite (eigenvalue {min_eigenvalue})"
            ),
            Error::NotOrthonormal => write!(f, "basis is not orthonormal"),
            Error::InvalidTree(msg) => write!(f, "invalid tree: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
