//! Append-only JSON-lines score log.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Result, StudyError};
use crate::session::Version;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub session_id: String,
    pub rater_id: String,
    pub token: String,
    pub patient_id: String,
    pub version: Version,
    pub score: u8,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Single writer; each append is flushed and synced before returning.
pub struct ScoreLog {
    path: PathBuf,
    file: File,
}

impl ScoreLog {
    /// Opens for appending, first cutting off a torn final line so the next
    /// record starts on a line of its own.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let ctx = || format!("opening {}", path.display());
        if let Ok(bytes) = fs::read(&path) {
            if bytes.last().is_some_and(|&b| b != b'\n') {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                let f = OpenOptions::new()
                    .write(true)
                    .open(&path)
                    .map_err(|e| StudyError::io(ctx(), e))?;
                f.set_len(keep as u64).map_err(|e| StudyError::io(ctx(), e))?;
                f.sync_all().map_err(|e| StudyError::io(ctx(), e))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StudyError::io(ctx(), e))?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &ScoreRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let ctx = || format!("appending to {}", self.path.display());
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| StudyError::io(ctx(), e))?;
        self.file.sync_data().map_err(|e| StudyError::io(ctx(), e))
    }
}

/// Reads every record. A final line without its newline is an interrupted
/// append that was never acknowledged, and is skipped.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(StudyError::io(format!("reading {}", path.display()), e)),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| {
                StudyError::Parse(format!("{} line {}: {e}", path.display(), n + 1))
            })
        })
        .collect()
}
