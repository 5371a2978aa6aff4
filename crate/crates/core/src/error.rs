use thiserror::Error;

use crate::curriculum::{CurriculumError, LibraryError};
use crate::gridworld::MapError;
use crate::learner::LearnerError;
use crate::schedule::ScheduleError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("budget: {0}")]
    Budget(String),
    #[error("feasible set has {count} curricula, above the ceiling of {ceiling}")]
    TooManyCurricula { count: u128, ceiling: u128 },
    #[error("cache file {path}: corrupt record on line {line}")]
    CorruptCache { path: String, line: usize },
    #[error("surrogate model: {0}")]
    Surrogate(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Errors caused by user input (bad config, infeasible curricula, ...)
    /// rather than by the program or environment.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Curriculum(_)
                | Error::Library(_)
                | Error::Map(_)
                | Error::Config(_)
                | Error::Budget(_)
                | Error::TooManyCurricula { .. }
                | Error::Schedule(ScheduleError::Unsupported { .. })
                | Error::Schedule(ScheduleError::Parse { .. })
                | Error::Schedule(ScheduleError::Shape(_))
                | Error::Schedule(ScheduleError::Negative { .. })
                | Error::Schedule(ScheduleError::ZeroLength)
                | Error::Learner(LearnerError::BadConfig(_))
                | Error::Learner(LearnerError::BadParamsFile(_))
                | Error::Learner(LearnerError::Tiles(_))
        )
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
