use std::path::PathBuf;

use thiserror::Error;

use crate::engine::{ModuleId, SimTime};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot schedule at {requested} (current time {now})")]
    ScheduleInPast { now: SimTime, requested: SimTime },

    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("runtime fault at {time} in {target} handling `{kind}`: {message}")]
    Fault {
        time: SimTime,
        target: ModuleId,
        kind: &'static str,
        message: String,
    },

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config { .. } | SimError::ScheduleInPast { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
