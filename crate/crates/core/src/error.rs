use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("symbol has a pole at z = {re} + {im}i")]
    Pole { re: f64, im: f64 },

    #[error("series did not converge within {terms} terms (last term {last_term:e})")]
    SeriesNonConvergence { terms: usize, last_term: f64 },

    #[error("quadrature failed to reach tolerance {tol:e} (estimate {estimate:e})")]
    Quadrature { tol: f64, estimate: f64 },

    #[error("unknown registry key `{key}` for {registry}")]
    UnknownKey { registry: &'static str, key: String },

    #[error("time {t} lies outside [0, {ell}]")]
    OutOfRange { t: f64, ell: f64 },

    #[error("missing resolvent data for mode {0}")]
    MissingMode(usize),

    #[error("Picard iteration did not converge on flow interval {interval} after {iters} iterations (residual {residual:e})")]
    PicardNonConvergence {
        interval: usize,
        iters: usize,
        residual: f64,
    },

    #[error("{failed} of {total} paths failed")]
    EnsembleFailure { failed: usize, total: usize },

    #[error("a priori bound undefined: impulse growth constant {value} >= 1 on interval {interval}")]
    BoundUndefined { interval: usize, value: f64 },

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::Pole { .. } => "pole",
            Error::SeriesNonConvergence { .. } => "series_non_convergence",
            Error::Quadrature { .. } => "quadrature",
            Error::UnknownKey { .. } => "unknown_key",
            Error::OutOfRange { .. } => "out_of_range",
            Error::MissingMode(_) => "missing_mode",
            Error::PicardNonConvergence { .. } => "picard_non_convergence",
            Error::EnsembleFailure { .. } => "ensemble_failure",
            Error::BoundUndefined { .. } => "bound_undefined",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}
