use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular evaluation: {0}")]
    Singularity(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("solvability: {0}")]
    Solvability(String),
    #[error("no admissible height: {0}")]
    NoAdmissibleHeight(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("degenerate basis: {0}")]
    Degenerate(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
