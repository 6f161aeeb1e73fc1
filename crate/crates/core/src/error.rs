use thiserror::Error;

use crate::config::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in subsystem `{subsystem}`: expected {expected}, got {got}")]
    DimensionMismatch {
        subsystem: String,
        expected: usize,
        got: usize,
    },

    #[error("operators act on different Hilbert spaces ({left} vs {right})")]
    SpaceMismatch { left: String, right: String },

    #[error("invalid Hilbert space: {0}")]
    InvalidSpace(String),

    #[error("photon-number cutoff must be at least 1")]
    ZeroCutoff,

    #[error("malformed angular momentum: {0}")]
    MalformedAngularMomentum(String),

    #[error("unknown manifold `{0}`")]
    UnknownManifold(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("{} configuration violation(s):\n{}", .0.len(), format_violations(.0))]
    Config(Vec<Violation>),

    #[error("hamiltonian is not hermitian (max deviation {deviation:.3e})")]
    NonHermitian { deviation: f64 },

    #[error("step size underflow at t = {last_good_time} us")]
    StepSizeUnderflow { last_good_time: f64 },

    #[error("steady state is not unique: null space of the Liouvillian has dimension {dimension}")]
    DegenerateNullSpace { dimension: usize },

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("scan point at detuning {detuning_mhz} MHz failed: {source}")]
    ScanPoint {
        detuning_mhz: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("fit did not converge: {0}")]
    FitNonConvergence(String),

    #[error("objective is flat over the search bracket (max |dchi2/dg0| = {max_slope:.3e})")]
    FlatObjective { max_slope: f64 },

    #[error("value {value} lies outside the computed range [{min}, {max}]; extrapolation refused")]
    Extrapolation { value: f64, min: f64, max: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Coarse error classes used for process exit codes and machine-readable reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Solver,
    Fit,
    Io,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Solver => "solver",
            ErrorClass::Fit => "fit",
            ErrorClass::Io => "io",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Solver => 3,
            ErrorClass::Fit => 4,
            ErrorClass::Io => 1,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::Parse(_) => ErrorClass::Config,
            Error::FitNonConvergence(_) | Error::FlatObjective { .. } | Error::Extrapolation { .. } => {
                ErrorClass::Fit
            }
            Error::ScanPoint { source, .. } => source.class(),
            Error::Io(_) => ErrorClass::Io,
            _ => ErrorClass::Solver,
        }
    }

    pub(crate) fn at_detuning(self, detuning_mhz: f64) -> Error {
        Error::ScanPoint {
            detuning_mhz,
            source: Box::new(self),
        }
    }
}
