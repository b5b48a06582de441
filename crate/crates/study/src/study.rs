//! Study state: the image set, live sessions and the score log.
//!
//! State directory layout: `sessions.json` (all sessions, rewritten
//! atomically) and `scores.jsonl` (append-only). On reopen each session's
//! cursor is recomputed from the log, which is the source of truth.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ldct_core::dataio::{encode_png, load_image, normalize, ImageBuffer, Normalization, PairManifest, Split};

use crate::error::{Result, StudyError};
use crate::log::{now, read_scores, ScoreLog, ScoreRecord};
use crate::report::{aggregate, SessionSummary, StudyReport};
use crate::session::{Progress, StudySession, Version};

pub const SESSIONS_FILE: &str = "sessions.json";
pub const SCORES_FILE: &str = "scores.jsonl";

#[derive(Debug, Clone)]
pub struct PatientImages {
    pub id: String,
    pub paths: BTreeMap<Version, PathBuf>,
}

/// The three image files for every manifest pair (optionally one split),
/// with enhanced images at `<enhanced_dir>/<id>.raw`.
pub fn collect_images(
    manifest: &PairManifest,
    enhanced_dir: &Path,
    split: Option<Split>,
) -> Result<Vec<PatientImages>> {
    let mut out = Vec::new();
    for p in &manifest.pairs {
        if split.is_some() && p.split != split {
            continue;
        }
        let paths = BTreeMap::from([
            (Version::Full, manifest.resolve(&p.full_path)),
            (Version::Quarter, manifest.resolve(&p.quarter_path)),
            (Version::Enhanced, enhanced_dir.join(format!("{}.raw", p.id))),
        ]);
        for (v, path) in &paths {
            if !path.is_file() {
                return Err(StudyError::MissingImage {
                    patient: p.id.clone(),
                    version: *v,
                    path: path.clone(),
                });
            }
        }
        out.push(PatientImages {
            id: p.id.clone(),
            paths,
        });
    }
    Ok(out)
}

/// What `next` hands to a rater: only the opaque token, progress and image.
#[derive(Debug, Clone, PartialEq)]
pub enum NextItem {
    Item {
        token: String,
        progress: Progress,
        png: Vec<u8>,
    },
    Done {
        progress: Progress,
    },
}

pub struct Study {
    patients: Vec<PatientImages>,
    normalization: Normalization,
    state_dir: PathBuf,
    sessions: BTreeMap<String, StudySession>,
    records: Vec<ScoreRecord>,
    log: ScoreLog,
    master_seed: u64,
}

impl Study {
    pub fn open(
        patients: Vec<PatientImages>,
        normalization: Normalization,
        state_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let state_dir = state_dir.into();
        fs::create_dir_all(&state_dir)
            .map_err(|e| StudyError::io(format!("creating {}", state_dir.display()), e))?;
        let sessions_path = state_dir.join(SESSIONS_FILE);
        let mut sessions: BTreeMap<String, StudySession> = BTreeMap::new();
        if sessions_path.is_file() {
            let text = fs::read_to_string(&sessions_path)
                .map_err(|e| StudyError::io(format!("reading {}", sessions_path.display()), e))?;
            let list: Vec<StudySession> = serde_json::from_str(&text)
                .map_err(|e| StudyError::Parse(format!("{}: {e}", sessions_path.display())))?;
            sessions = list.into_iter().map(|s| (s.id.clone(), s)).collect();
        }
        let records = read_scores(state_dir.join(SCORES_FILE))?;
        for s in sessions.values_mut() {
            s.cursor = records.iter().filter(|r| r.session_id == s.id).count();
        }
        let log = ScoreLog::open(state_dir.join(SCORES_FILE))?;
        Ok(Self {
            patients,
            normalization,
            state_dir,
            sessions,
            records,
            log,
            master_seed: 0,
        })
    }

    /// Seed source for sessions created without an explicit seed.
    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.id.clone()).collect()
    }

    pub fn session(&self, id: &str) -> Result<&StudySession> {
        self.sessions
            .get(id)
            .ok_or_else(|| StudyError::UnknownSession(id.to_string()))
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    fn save_sessions(&self) -> Result<()> {
        let path = self.state_dir.join(SESSIONS_FILE);
        let tmp = self.state_dir.join(format!("{SESSIONS_FILE}.tmp~"));
        let list: Vec<&StudySession> = self.sessions.values().collect();
        let text = serde_json::to_string_pretty(&list).expect("sessions serialize");
        fs::write(&tmp, text).map_err(|e| StudyError::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, &path).map_err(|e| StudyError::io(format!("writing {}", path.display()), e))
    }

    /// `None` derives the seed from the master seed and the session count,
    /// so a replayed run hands out the same orders.
    pub fn create_session(&mut self, rater_id: &str, seed: Option<u64>) -> Result<&StudySession> {
        let seed = seed.unwrap_or_else(|| self.master_seed.wrapping_add(self.sessions.len() as u64));
        if rater_id.trim().is_empty() {
            return Err(StudyError::EmptyRater);
        }
        let s = StudySession::new(rater_id, seed, &self.patient_ids());
        let id = s.id.clone();
        self.sessions.insert(id.clone(), s);
        self.save_sessions()?;
        Ok(&self.sessions[&id])
    }

    /// Image for the item at the cursor, windowed by the manifest
    /// normalization and encoded as 16-bit PNG.
    pub fn next_item(&self, session_id: &str) -> Result<NextItem> {
        let s = self.session(session_id)?;
        let Some(item) = s.current() else {
            return Ok(NextItem::Done {
                progress: s.progress(),
            });
        };
        let patient = self
            .patients
            .iter()
            .find(|p| p.id == item.patient)
            .ok_or_else(|| StudyError::Parse(format!("session refers to unknown patient {}", item.patient)))?;
        let img = load_image(&patient.paths[&item.version])?;
        let t = normalize(&img, &self.normalization)?;
        let windowed = ImageBuffer::new(img.height, img.width, t.into_data())?;
        Ok(NextItem::Item {
            token: item.token.clone(),
            progress: s.progress(),
            png: encode_png(&windowed)?,
        })
    }

    /// Records a score for the current item. Resubmitting an already scored
    /// item with the same value is accepted without effect.
    pub fn submit(&mut self, session_id: &str, token: &str, score: i64) -> Result<Progress> {
        let s = self.session(session_id)?;
        if !(1..=10).contains(&score) {
            return Err(StudyError::ScoreOutOfRange(score));
        }
        let (index, item) = s.item(token).ok_or(StudyError::StaleToken)?;
        if index < s.cursor {
            let prior = self
                .records
                .iter()
                .find(|r| r.session_id == session_id && r.token == token);
            return match prior {
                Some(r) if r.score as i64 == score => Ok(s.progress()),
                _ => Err(StudyError::ConflictingScore),
            };
        }
        if index != s.cursor {
            return Err(StudyError::StaleToken);
        }
        let record = ScoreRecord {
            session_id: session_id.to_string(),
            rater_id: s.rater_id.clone(),
            token: token.to_string(),
            patient_id: item.patient.clone(),
            version: item.version,
            score: score as u8,
            timestamp: now(),
        };
        self.log.append(&record)?;
        self.records.push(record);
        let s = self.sessions.get_mut(session_id).expect("checked above");
        s.cursor += 1;
        Ok(s.progress())
    }

    pub fn summaries(&self) -> Vec<SessionSummary> {
        self.sessions
            .values()
            .map(|s| SessionSummary {
                id: s.id.clone(),
                rater_id: s.rater_id.clone(),
                total: s.items.len(),
            })
            .collect()
    }

    pub fn report(&self) -> Result<StudyReport> {
        aggregate(&self.records, Some(&self.summaries()))
    }
}

/// Sessions stored next to a score log, if any.
pub fn read_sessions_beside(scores: &Path) -> Result<Option<Vec<SessionSummary>>> {
    let path = scores
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(SESSIONS_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)
        .map_err(|e| StudyError::io(format!("reading {}", path.display()), e))?;
    let list: Vec<StudySession> = serde_json::from_str(&text)
        .map_err(|e| StudyError::Parse(format!("{}: {e}", path.display())))?;
    Ok(Some(
        list.into_iter()
            .map(|s| SessionSummary {
                total: s.items.len(),
                id: s.id,
                rater_id: s.rater_id,
            })
            .collect(),
    ))
}
