use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent input data.
    #[error("validation error: {0}")]
    Validation(String),

    /// The geometry mapping is not valid (non-positive Jacobian determinant).
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("geometry parse error: {0}")]
    Parse(String),

    #[error("singular matrix in {op}: {detail}")]
    Singular { op: &'static str, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("matrix is not positive definite: {0}")]
    Definiteness(String),

    #[error("solver error: {0}")]
    Solver(String),

    /// The eigenvalue is (numerically) multiple; derivatives need special treatment.
    #[error(
        "eigenvalue of mode {mode} is not simple (relative gap {gap:.3e}){}",
        step.map(|s| format!(" at step {s}")).unwrap_or_default()
    )]
    Multiplicity {
        mode: usize,
        gap: f64,
        step: Option<usize>,
    },

    #[error("bordered system is numerically rank deficient: {0}")]
    NumericalRank(String),

    #[error("no match for mode {mode} at step {step}: best correlation {best:.6} below threshold {threshold}")]
    NoMatch {
        mode: usize,
        step: usize,
        best: f64,
        threshold: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Geometry(_) | Error::Parse(_) | Error::Validation(_) => 2,
            Error::Domain(_)
            | Error::Singular { .. }
            | Error::Definiteness(_)
            | Error::Solver(_)
            | Error::NumericalRank(_)
            | Error::Unsupported(_) => 3,
            Error::Multiplicity { .. } => 4,
            Error::NoMatch { .. } => 5,
            Error::Io(_) => 1,
        }
    }
}
