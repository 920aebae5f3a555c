use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] cligme::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("trial {index}: {source}")]
    Trial {
        index: usize,
        #[source]
        source: cligme::Error,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;
