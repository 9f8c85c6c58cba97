use thiserror::Error;

/// Errors raised by the lattice, quantization and verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("site out of range: {0}")]
    OutOfRange(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid mass {0}: must be positive")]
    InvalidMass(f64),

    #[error("complexity guard: {what} = {got} exceeds cap {cap}")]
    ComplexityGuard { what: &'static str, got: usize, cap: usize },

    #[error("support violation: site {site:?} is not in the admissible positive-time region")]
    SupportViolation { site: Vec<i64> },

    #[error("reflection positivity failed: minimum eigenvalue {min_eigenvalue:e} (largest {max_eigenvalue:e})")]
    ReflectionPositivity { min_eigenvalue: f64, max_eigenvalue: f64 },

    #[error("vector lies outside the generator span (residual {residual:e}); enlarge the generator family")]
    SpanDeficiency { residual: f64 },

    #[error("time-shift margin violated: {0}; increase the time extent T")]
    Margin(String),

    #[error("spectral continuation failed: {0}")]
    Continuation(String),

    #[error("operator is not unitary (residual {0:e}); check geometry and generator supports")]
    NotUnitary(f64),

    #[error("unsupported regime: {0}")]
    Unsupported(String),

    #[error("schedule infeasible: {0}")]
    ScheduleInfeasible(String),

    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("outside certified domain: {0}")]
    OutsideDomain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact {artifact}: run `{subcommand}` first")]
    MissingArtifact { artifact: String, subcommand: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
