use thiserror::Error;

/// Errors raised by the model, estimation and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or observation outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A state invariant (e.g. severity shape > 1) would be violated.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// The Laplace term of the count distribution does not exist: the
    /// dependence parameter must stay strictly below `bound`.
    #[error("existence condition violated: eta = {eta} must be < {bound}")]
    Existence { eta: f64, bound: f64 },

    /// An iterative procedure failed to converge or produced non-finite values.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// Malformed or inconsistent input data. Messages carry line numbers when known.
    #[error("data error: {}", .0.join("; "))]
    Data(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(vec![msg.into()])
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
            Error::Domain(_) | Error::Invariant(_) | Error::Numeric(_) => 4,
            Error::Existence { .. } => 5,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
