use thiserror::Error;

/// Every failure the library can surface.
///
/// Variants split into two families: data errors (bad input, bad
/// configuration) and numerical errors (singular systems, degenerate
/// bootstraps). [`Error::is_data_error`] tells them apart; the CLI maps the
/// two families onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("active-set loop did not terminate after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("restricted design matrix is rank deficient")]
    RankDeficient,

    #[error("restricted variance estimate {sigma2:.3e} is degenerate")]
    DegenerateVariance { sigma2: f64 },

    #[error("score covariance is singular: {0}")]
    SingularCovariance(String),

    #[error("bootstrap degenerate: {failed} of {total} draws failed to produce a valid statistic")]
    BootstrapDegenerate { failed: usize, total: usize },

    #[error("p-value arity mismatch: {0}")]
    ArityMismatch(String),

    #[error("invalid correlation rho = {rho} for k = {k}: need 1 + k*rho > 0 and rho < 1")]
    InvalidRho { rho: f64, k: usize },

    #[error("ARCH coefficients sum to {sum} >= 1; variance is explosive")]
    ExplosiveVariance { sum: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("replication {index} failed: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing column(s): {}", .0.join(", "))]
    MissingColumn(Vec<String>),

    #[error("non-numeric cell at row {row}, column {column:?}")]
    NonNumericCell { row: usize, column: String },

    #[error("too few rows: T = {rows} but need more than {needed}")]
    TooFewRows { rows: usize, needed: usize },

    #[error("invalid config field {field:?}: {message}")]
    ConfigInvalid { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for input/configuration problems, false for numerical failures.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::MissingColumn(_)
            | Error::NonNumericCell { .. }
            | Error::TooFewRows { .. }
            | Error::ConfigInvalid { .. }
            | Error::InvalidInput(_)
            | Error::InvalidRho { .. }
            | Error::ExplosiveVariance { .. }
            | Error::ArityMismatch(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => true,
            Error::Replication { source, .. } => source.is_data_error(),
            Error::NotPositiveDefinite { .. }
            | Error::NonConvergence { .. }
            | Error::RankDeficient
            | Error::DegenerateVariance { .. }
            | Error::SingularCovariance(_)
            | Error::BootstrapDegenerate { .. } => false,
        }
    }

    /// Short machine-readable tag, used in structured error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::RankDeficient => "RankDeficient",
            Error::DegenerateVariance { .. } => "DegenerateVariance",
            Error::SingularCovariance(_) => "SingularCovariance",
            Error::BootstrapDegenerate { .. } => "BootstrapDegenerate",
            Error::ArityMismatch(_) => "ArityMismatch",
            Error::InvalidRho { .. } => "InvalidRho",
            Error::ExplosiveVariance { .. } => "ExplosiveVariance",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Replication { .. } => "Replication",
            Error::MissingColumn(_) => "MissingColumn",
            Error::NonNumericCell { .. } => "NonNumericCell",
            Error::TooFewRows { .. } => "TooFewRows",
            Error::ConfigInvalid { .. } => "ConfigInvalid",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
