use thiserror::Error;

/// Errors raised by model ingestion, interpolation, assembly and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Fewer support nodes than polynomial terms, even after growing the radius.
    #[error("support deficiency at {point:?}: {found} nodes within radius {radius}, need {needed}")]
    SupportDeficiency {
        point: Vec<f64>,
        radius: f64,
        found: usize,
        needed: usize,
    },

    /// The polynomial moment matrix PᵀR⁻¹P is singular (e.g. collinear support).
    #[error("rank-deficient polynomial system at {point:?} ({support} support nodes)")]
    RankDeficient { point: Vec<f64>, support: usize },

    /// Correlation matrix could not be factorized even after diagonal jitter.
    #[error("ill-conditioned correlation matrix at {point:?}: condition estimate {condition:e}")]
    Conditioning { point: Vec<f64>, condition: f64 },

    /// Stiffness is not positive definite; `null_vector` spans the offending direction.
    #[error("stiffness matrix singular at dof {dof}: insufficient constraints (rigid-body mode)")]
    RigidBody { dof: usize, null_vector: Vec<f64> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Numerical breakdown inside a reanalysis step.
    #[error("numerical breakdown: {0}")]
    Breakdown(String),

    /// The modified structure itself cannot carry the load.
    #[error("modified structure is singular: {0}")]
    Structural(String),

    /// A relative error was requested against a zero reference.
    #[error("relative error undefined: reference {0} norm is zero")]
    UndefinedError(&'static str),
}

impl Error {
    /// Process exit code for this class of failure (2 validation, 3 numerical, 4 I/O).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Validation(_) | Error::Dimension(_) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
