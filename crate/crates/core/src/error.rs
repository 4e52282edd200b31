use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate element {element} (measure {measure:e})")]
    DegenerateElement { element: usize, measure: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("eigensolver did not converge: max residual {max_residual:e} after {krylov_dim} Lanczos vectors")]
    EigenNonConvergence {
        max_residual: f64,
        krylov_dim: usize,
        residuals: Vec<f64>,
    },

    #[error("eikonal solver did not converge after {updates} updates (max residual {max_residual:e} ms)")]
    EikonalNonConvergence { updates: usize, max_residual: f64 },

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("hyperparameter fit failed: {0}")]
    Fit(String),

    #[error("forward model failed at node {node}: {source}")]
    Forward {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    /// A prerequisite artifact is missing or was built from another config.
    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Wraps the error with a short description of the step that failed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error once all context layers are stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}
