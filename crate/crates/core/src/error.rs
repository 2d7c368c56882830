use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("query not admissible: {0}")]
    NotAdmissible(String),

    #[error("descent diverged at iteration {iteration}: energy {before} -> {after} after {backtracks} backtracks")]
    Diverged {
        iteration: usize,
        before: f64,
        after: f64,
        backtracks: usize,
    },

    #[error("balls {first} and {second} overlap: center distance {distance} < required {required}")]
    Overlap {
        first: usize,
        second: usize,
        distance: f64,
        required: f64,
    },

    #[error("covering invariant violated: {0}")]
    Covering(String),

    #[error("internal consistency check failed: {0}")]
    Assertion(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
