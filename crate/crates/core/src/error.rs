use std::path::PathBuf;

use thiserror::Error;

use crate::sampler::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid force list: {0}")]
    InvalidForceList(Violation),

    #[error("sampler exhausted after {attempts} attempts for M = {m}")]
    SamplerExhausted { m: usize, attempts: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("image error: {0}")]
    Image(String),

    #[error("non-finite residual at iteration {iteration} for M = {m}")]
    NonFinite { m: usize, iteration: usize },

    #[error("all reconstruction branches failed: {0}")]
    Reconstruction(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
