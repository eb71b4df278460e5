use thiserror::Error;

/// A configuration value failed validation. `field` is the dotted config path.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("invalid value for `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum SimulationFault {
    #[error("state became non-finite at t = {time} s")]
    NonFiniteState { time: f64 },
    #[error("network input is non-finite")]
    NonFiniteInput,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error(transparent)]
    Simulation(#[from] SimulationFault),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
