use thiserror::Error;

/// Errors raised by the scattering toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("representation mismatch: expected {expected}, found {found}")]
    RepresentationMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("aliasing: {0}")]
    Aliasing(String),

    #[error("velocity or displacement is off the lattice: {0}")]
    OffLattice(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("mass escaped the safe box: {outside:.3e} of the mass lies outside at t = {time}")]
    Wrap { time: f64, outside: f64 },

    #[error("non-finite value encountered at t = {0}")]
    NonFinite(f64),

    #[error("norm drift {drift:.3e} exceeds tolerance {tol:.3e} for orbital {orbital}")]
    NormDrift {
        orbital: usize,
        drift: f64,
        tol: f64,
    },

    #[error("transit constraint violated: {0}")]
    Transit(String),

    #[error("scattering tail did not converge after {doublings} horizon doublings (change {change:.3e})")]
    TailNotConverged { doublings: usize, change: f64 },

    #[error("time quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("singular value decomposition failed: {0}")]
    Svd(String),

    #[error("empty usable spectrum: all singular values are below the rank tolerance")]
    EmptySpectrum,

    #[error("infeasible geometry: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("integrity check failed for {path}: expected sha256 {expected}, found {found}")]
    Integrity {
        path: String,
        expected: String,
        found: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
