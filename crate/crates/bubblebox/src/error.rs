//! Error taxonomy shared by every module, split along the lines the CLI
//! reports: bad input, a physics guard tripping mid-run, or a numerical
//! breakdown. The split matters because each class maps to a distinct
//! process exit code.

use thiserror::Error;

/// Everything that can go wrong inside the simulator.
#[derive(Debug, Error)]
pub enum SimError {
    /// Configuration or parameter rejected before any time stepping.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A quantity left its mathematical domain (negative density handed to a
    /// power law, exponent 1 in a potential, radius ≤ 0, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Bubble radius fell below the guard floor; the run must abort rather
    /// than continue on a state the model no longer covers.
    #[error("bubble collapse guard: radius {radius:.6e} fell below floor {floor:.6e} at t = {t:.6e}")]
    Collapse { radius: f64, floor: f64, t: f64 },

    /// Bubble surface came closer to the wall than the configured margin.
    #[error("wall-contact guard: boundary distance {distance:.6e} below margin {margin:.6e} at t = {t:.6e}")]
    WallContact { distance: f64, margin: f64, t: f64 },

    /// The density field went negative — reported, never clamped.
    #[error("negative density guard: min density {min:.6e} at t = {t:.6e}")]
    NegativeDensity { min: f64, t: f64 },

    /// A linear solve failed to reach its residual target or the system was
    /// singular.
    #[error("solver breakdown: {0}")]
    SolverBreakdown(String),

    /// NaN or infinity appeared in a state field.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

impl From<csv::Error> for SimError {
    fn from(e: csv::Error) -> Self {
        SimError::Io(std::io::Error::other(e))
    }
}

impl SimError {
    /// Stable machine-readable tag for the structured error file a run
    /// directory receives when the driver aborts.
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::InvalidInput(_) => "invalid_input",
            SimError::Domain(_) => "domain",
            SimError::Collapse { .. } => "collapse",
            SimError::WallContact { .. } => "wall_contact",
            SimError::NegativeDensity { .. } => "negative_density",
            SimError::SolverBreakdown(_) => "solver_breakdown",
            SimError::NonFinite(_) => "non_finite",
            SimError::Io(_) => "io",
            SimError::ConfigParse(_) => "config_parse",
        }
    }

    /// Process exit code the CLI reports for this error:
    /// 2 = rejected input, 3 = physics guard abort, 4 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::InvalidInput(_) | SimError::Domain(_) | SimError::ConfigParse(_) => 2,
            SimError::Collapse { .. }
            | SimError::WallContact { .. }
            | SimError::NegativeDensity { .. } => 3,
            SimError::SolverBreakdown(_) | SimError::NonFinite(_) | SimError::Io(_) => 4,
        }
    }
}

pub type SimResult<T> = Result<T, SimError>;
