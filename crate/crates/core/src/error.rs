use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StefanError {
    #[error("mode index {n} exceeds cutoff K = {k}")]
    CutoffExceeded { n: usize, k: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid interface: {0}")]
    InvalidInterface(String),

    #[error("remap required: interface excursion {excursion:.3e} exceeds blend width {d:.3e}")]
    RemapRequired { excursion: f64, d: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("ill-posed interface update: {0}")]
    IllPosedUpdate(String),

    #[error("picard iteration did not contract within {iterations} iterations (last distance {distance:.3e})")]
    NoContraction { iterations: usize, distance: f64 },

    #[error("newton iteration failed: data not small ({0})")]
    DataNotSmall(String),

    #[error("radial integrator overflow at lambda = {lambda}: bracket too wide")]
    BracketTooWide { lambda: f64 },

    #[error("ambiguous bracketing, roots: {roots:?}")]
    ReportAllRoots { roots: Vec<f64> },

    #[error("stable regime: no positive eigenvalue (minimum of the quotient is {min_quotient:.6e})")]
    StableRegime { min_quotient: f64 },

    #[error("growth fit window is empty: delta too large")]
    WindowEmpty,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, StefanError>;
