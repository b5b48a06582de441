//! Blinded reader study: seeded presentation sessions, a durable score log,
//! per-rater aggregation and the HTTP service raters talk to.

mod error;
pub mod log;
pub mod report;
pub mod server;
pub mod session;
pub mod study;

pub use error::{Result, StudyError};
pub use log::{read_scores, ScoreLog, ScoreRecord};
pub use report::{aggregate, RaterSummary, SessionSummary, StudyReport};
pub use session::{Progress, StudySession, Version, VERSIONS};
pub use study::{collect_images, read_sessions_beside, NextItem, PatientImages, Study};
