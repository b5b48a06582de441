use std::path::PathBuf;

use crate::session::Version;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("score {0} outside 1..=10")]
    ScoreOutOfRange(i64),

    #[error("token is not the current item")]
    StaleToken,

    #[error("item already scored with a different value")]
    ConflictingScore,

    #[error("patient {patient} has no {version} image at {}", path.display())]
    MissingImage {
        patient: String,
        version: Version,
        path: PathBuf,
    },

    #[error("score record references unknown session {0}")]
    UnknownRecordSession(String),

    #[error("rater id must not be empty")]
    EmptyRater,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Core(#[from] ldct_core::Error),
}

impl StudyError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = StudyError> = std::result::Result<T, E>;
