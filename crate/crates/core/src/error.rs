use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid torus: dimension {d}, side {n} (need 1 <= d <= 3, n >= 2)")]
    InvalidTorus { d: usize, n: usize },
    #[error("coordinate vector has length {got}, torus dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("density {0} outside the admissible range")]
    InvalidDensity(f64),
    #[error("torus side {n} too small for support of diameter {diameter}")]
    TorusTooSmall { n: usize, diameter: usize },
    #[error("state space of {sites} sites exceeds the exact-enumeration bound of {max} sites")]
    StateSpaceTooLarge { sites: usize, max: usize },
    #[error("measure has total mass {0}, expected zero")]
    NonZeroMass(f64),
    #[error("joint support of {0} sites exceeds the enumeration bound of 24")]
    SupportTooLarge(usize),
    #[error("diffusion matrix is not positive definite (direction {direction:?}, quadratic form {value})")]
    NotElliptic { direction: Vec<i64>, value: f64 },
    #[error("window parameter {ell} invalid for torus side {n}")]
    InvalidWindow { ell: usize, n: usize },
    #[error("negative density entry {0}")]
    NegativeDensity(f64),
    #[error("integrator failure: {0}")]
    Integrator(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("chain absorbed: total rate is zero")]
    Absorbed,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
