use thiserror::Error;

/// Errors produced anywhere in the crate.
///
/// Variants map onto the CLI exit codes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("matrix is not Schur stable: spectral radius {radius:.6} ({context})")]
    Unstable { radius: f64, context: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unbounded: {0}")]
    Unbounded(String),

    #[error("invalid block layout: {0}")]
    Layout(String),

    #[error("configuration error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("containment violated: {0}")]
    Containment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { path: path.into(), msg: msg.into() }
    }

    /// Process exit code used by the `hidden-reach` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Dimension(_)
            | Error::Validation(_)
            | Error::Domain(_)
            | Error::Layout(_) => 2,
            Error::Infeasible(_) | Error::Unbounded(_) => 3,
            Error::Unstable { .. } | Error::Degenerate(_) | Error::Numerical(_) => 4,
            Error::Containment(_) => 5,
        }
    }
}
