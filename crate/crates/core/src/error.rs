use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the toolkit.
///
/// Variants are grouped by the exit code the CLI maps them to, see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{estimand} is not pathwise differentiable: {reason}")]
    NotPathwiseDifferentiable {
        estimand: String,
        reason: String,
    },

    #[error("missing nuisance: {0}")]
    Nuisance(String),

    #[error("positivity violation: {0}")]
    Positivity(String),

    #[error("singular normal equations: {0}")]
    Singular(String),

    #[error("separation detected in logistic fit: {0}")]
    Separation(String),

    #[error("kernel extrapolation: total kernel weight {weight:e} at evaluation point")]
    Extrapolation { weight: f64 },

    #[error("derivative unstable: {0}")]
    DerivativeUnstable(String),

    #[error("integration did not converge: {0}")]
    Integration(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("fitting failed in fold {fold}: {source}")]
    Fitting {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    ///
    /// 1 validation, 2 numerical failure, 3 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::Config { .. }
            | Error::Argument(_)
            | Error::NotPathwiseDifferentiable { .. }
            | Error::Nuisance(_)
            | Error::Io(_)
            | Error::Json(_) => 1,
            Error::Positivity(_)
            | Error::Singular(_)
            | Error::Separation(_)
            | Error::Extrapolation { .. }
            | Error::DerivativeUnstable(_)
            | Error::Integration(_)
            | Error::Solver(_) => 2,
            Error::Fitting { source, .. } => source.exit_code(),
            Error::Verification(_) => 3,
        }
    }
}
