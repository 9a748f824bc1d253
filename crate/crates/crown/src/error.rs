use crown_core::CrownError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CrownError),
    #[error("factor VAR is not stationary: spectral radius {0:.6} >= 1")]
    NonStationary(f64),
    #[error("innovation covariance is not positive semidefinite (smallest eigenvalue {0:e})")]
    InnovationCovariance(f64),
    #[error("{path}: line {line}, column '{column}': {message}")]
    Parse {
        path: String,
        line: usize,
        column: String,
        message: String,
    },
    #[error("dates do not line up: {0}")]
    DateMisalignment(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
