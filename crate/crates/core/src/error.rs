use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification of failures, used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCategory {
    Io,
    Parse,
    Model,
    Drift,
    Numeric,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Io => "io",
            ErrorCategory::Parse => "parse",
            ErrorCategory::Model => "model",
            ErrorCategory::Drift => "drift",
            ErrorCategory::Numeric => "numeric",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    /// An argument outside its documented domain.
    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("invalid rate matrix: {0}")]
    InvalidRateMatrix(String),

    #[error("rate matrix is not irreducible: {0}")]
    NotIrreducible(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error(
        "state {state} has zero net generation (demand {demand} equals its bin center); shift the demand or merge bins"
    )]
    ZeroNetGeneration { state: usize, demand: f64 },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero-drift unsupported: drift {drift:e} is zero within tolerance")]
    ZeroDrift { drift: f64 },

    #[error("{what} requires {required} drift, got {drift}")]
    DriftSign {
        what: &'static str,
        required: &'static str,
        drift: f64,
    },

    #[error("target LOLP {target} unattainable at any battery size: LOLP always exceeds the lower bound {bound}")]
    Unattainable { target: f64, bound: f64 },

    #[error("uniformization rate too small: {q_rate} must exceed the largest exit rate {max_exit}")]
    UniformizationRate { q_rate: f64, max_exit: f64 },

    #[error("non-real spectrum (model not reversible?): eigenvalue {re:e}{im:+e}i")]
    NonRealSpectrum { re: f64, im: f64 },

    #[error("defective spectrum: {0}")]
    DefectiveSpectrum(String),

    #[error("numerically degenerate: {0}")]
    Degenerate(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("residual check failed: {what} residual {residual:e} exceeds {tolerance:e}")]
    Residual {
        what: &'static str,
        residual: f64,
        tolerance: f64,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::Parse(_) | Error::Domain(_) => ErrorCategory::Parse,
            Error::InvalidRateMatrix(_)
            | Error::NotIrreducible(_)
            | Error::InvalidModel(_)
            | Error::ZeroNetGeneration { .. }
            | Error::DegenerateModel(_)
            | Error::InsufficientData(_) => ErrorCategory::Model,
            Error::ZeroDrift { .. } | Error::DriftSign { .. } | Error::Unattainable { .. } => ErrorCategory::Drift,
            Error::UniformizationRate { .. }
            | Error::NonRealSpectrum { .. }
            | Error::DefectiveSpectrum(_)
            | Error::Degenerate(_)
            | Error::Convergence(_)
            | Error::Residual { .. } => ErrorCategory::Numeric,
        }
    }

    /// Remediation text for errors where the fix is not obvious from the message.
    pub fn hint(&self) -> Option<&'static str> {
        match self {
            Error::ZeroNetGeneration { .. } => {
                Some("choose a demand that differs from every bin center, or merge the bins around it")
            }
            Error::ZeroDrift { .. } => Some("perturb the demand slightly so the mean net generation is nonzero"),
            Error::NonRealSpectrum { .. } => Some("the background chain should be time-reversible"),
            Error::InsufficientData(_) => {
                Some("use a longer trace, coarser bins, or lower the min_transitions threshold")
            }
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
