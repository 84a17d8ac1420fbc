use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, gains, presets or command-line input.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or insufficient data (logs, manifests, datasets).
    #[error("data error: {0}")]
    Data(String),

    /// Simulation integrity failure (NaN inputs, broken invariants).
    #[error("simulation fault: {0}")]
    Simulation(String),

    /// Training produced non-finite values or diverged.
    #[error("training fault: {message}")]
    Training {
        message: String,
        /// Flat parameter vector at the time of the fault.
        snapshot: Option<Vec<f64>>,
    },

    /// Model file problems: version, checksum, stage gate, dimension mismatch.
    #[error("model error: {0}")]
    Model(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric fault.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Model(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Simulation(_) | Error::Training { .. } => 4,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(format!("json: {e}"))
    }
}
