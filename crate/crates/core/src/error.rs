use nalgebra::DVector;
use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("subject {subject}: missingness is not monotone (observed after a missing visit)")]
    Monotonicity { subject: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("design matrix is rank deficient: rank {rank} < {required} ({context})")]
    Rank {
        rank: usize,
        required: usize,
        context: String,
    },

    #[error("psi' is not defined for the {0} loss; use the bootstrap variance instead")]
    UnsupportedDerivative(&'static str),

    #[error("robust scatter matrix is singular")]
    SingularScatter,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate scale in column {column}: every value is identical")]
    DegenerateScale { column: usize },

    #[error("IRLS did not converge in {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        last_iterate: DVector<f64>,
    },

    #[error("cross-validation failed for every candidate nu")]
    CvExhausted,

    #[error("imputation model fit failed at visit {visit}: {source}")]
    ImputationFit {
        visit: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("estimating-function Jacobian is singular ({0})")]
    SingularJacobian(String),

    #[error("bootstrap unstable: {failed} of {total} replicates failed")]
    BootstrapInstability { failed: usize, total: usize },

    #[error("zero residual variance in the imputation model at visit {visit}")]
    DegenerateNoise { visit: usize },

    #[error("arm {arm} has {found} completers, at least {required} needed for outlier injection")]
    InsufficientCompleters {
        arm: u8,
        found: usize,
        required: usize,
    },

    #[error("Monte Carlo unstable: method {method} failed in {failed} of {total} replicates")]
    McInstability {
        method: String,
        failed: usize,
        total: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Monotonicity { .. } => "MonotonicityError",
            Error::Schema(_) => "SchemaError",
            Error::Rank { .. } => "RankError",
            Error::UnsupportedDerivative(_) => "UnsupportedDerivative",
            Error::SingularScatter => "SingularScatterError",
            Error::InsufficientData(_) => "InsufficientDataError",
            Error::DegenerateScale { .. } => "DegenerateScaleError",
            Error::NonConvergence { .. } => "NonConvergenceError",
            Error::CvExhausted => "CvExhaustedError",
            Error::ImputationFit { .. } => "ImputationFitError",
            Error::SingularJacobian(_) => "SingularJacobianError",
            Error::BootstrapInstability { .. } => "BootstrapInstabilityError",
            Error::DegenerateNoise { .. } => "DegenerateNoiseError",
            Error::InsufficientCompleters { .. } => "InsufficientCompletersError",
            Error::McInstability { .. } => "McInstabilityError",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }

    /// The innermost error, looking through imputation-fit wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::ImputationFit { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
