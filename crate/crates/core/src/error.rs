use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },

    #[error("spectral function is not finite at eigenvalue {eigenvalue}")]
    NonFinite { eigenvalue: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotSpd { min_eigenvalue: f64 },

    #[error("matrix is singular (determinant {det:e})")]
    Singular { det: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid model parameters: {0}")]
    InvalidModel(String),

    #[error("theta is outside the domain U (min eigenvalue of phi {min_eig_phi:e})")]
    OutOfDomain { min_eig_phi: f64 },

    #[error("theta is on the boundary of U (min eigenvalue of phi {min_eig_phi:e})")]
    OnBoundary { min_eig_phi: f64 },

    #[error("existence condition of the joint Laplace transform fails: {0}")]
    ConditionFailed(String),

    #[error("optimizer did not converge: {0}")]
    NotConverged(String),

    #[error("y = {y} lies in the plateau regime")]
    PlateauRegime { y: f64 },

    #[error("y = {y} is not strictly inside the plateau regime")]
    OutOfPlateau { y: f64 },

    #[error("y = {y} coincides with a regime constant")]
    DegenerateY { y: f64 },

    #[error("limiting call price {c} has no finite normal quantile")]
    DegenerateC { c: f64 },

    #[error("negative radicand in the limiting smile: L = {l}, L + y = {l_plus_y}")]
    NegativeRadicand { l: f64, l_plus_y: f64 },

    #[error("price {price} is outside the no-arbitrage bounds [{lower}, {upper}]")]
    OutOfBounds { price: f64, lower: f64, upper: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
