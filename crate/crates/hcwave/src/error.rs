//! Error type shared across the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Constructor argument outside its admissible range.
    InvalidParameter(String),
    /// Evaluation outside the domain of definition (e.g. negative time).
    Domain(String),
    /// Vector or field length inconsistent with the grid.
    Shape(String),
    /// A moving-boundary hypothesis failed validation.
    Hypothesis { which: &'static str, detail: String },
    /// Time step too large for the spatial step.
    Cfl { dt: f64, limit: f64, min_nt: usize },
    /// Dense-oracle size guard tripped.
    Guard(String),
    /// A marching solve produced non-finite or explosive values.
    Divergence {
        what: &'static str,
        level: usize,
        value: f64,
    },
    /// An iterative solve hit its iteration cap before reaching tolerance.
    IterationLimit {
        what: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    /// The follower feedback sweep does not contract; the coupled optimality
    /// system has no usable fixed point at this penalty.
    NonContractive { what: &'static str, ratio: f64 },
    /// The dual minimization hit its iteration cap; the best iterate rides
    /// along so callers can still inspect or recover from it.
    DualStalled {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
        f0: Vec<f64>,
        f1: Vec<f64>,
    },
    Io(std::io::Error),
    /// Malformed on-disk field/trace/data file.
    Parse(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Hypothesis { which, detail } => {
                write!(f, "hypothesis {which} violated: {detail}")
            }
            Error::Cfl { dt, limit, min_nt } => write!(
                f,
                "time step {dt:.6e} exceeds the stability limit {limit:.6e}; \
                 use at least {min_nt} time steps"
            ),
            Error::Guard(msg) => write!(f, "size guard: {msg}"),
            Error::Divergence { what, level, value } => write!(
                f,
                "{what} diverged at time level {level} (max value {value:.3e})"
            ),
            Error::IterationLimit {
                what,
                iterations,
                residual,
                ..
            } => write!(
                f,
                "{what} did not converge within {iterations} iterations \
                 (last residual {residual:.3e})"
            ),
            Error::NonContractive { what, ratio } => write!(
                f,
                "{what} is non-contractive (growth ratio {ratio:.3e}); \
                 increase the follower penalty"
            ),
            Error::DualStalled {
                iterations,
                residual,
                ..
            } => write!(
                f,
                "dual minimization stalled after {iterations} iterations \
                 (last residual {residual:.3e})"
            ),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
