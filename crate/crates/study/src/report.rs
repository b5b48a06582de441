//! Per-rater, per-version aggregation of unblinded score records.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, StudyError};
use crate::log::ScoreRecord;
use crate::session::{Version, VERSIONS};

/// Session identity needed to validate and group records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub rater_id: String,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionStats {
    pub version: Version,
    /// Scores ordered by patient id.
    pub scores: Vec<u8>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterSummary {
    pub rater_id: String,
    pub versions: Vec<VersionStats>,
}

impl RaterSummary {
    pub fn mean(&self, v: Version) -> Option<f64> {
        self.versions.iter().find(|s| s.version == v).and_then(|s| s.mean)
    }
}

/// Mean score per (rater, version) for one patient; a single score when each
/// rater saw the item once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRow {
    pub patient_id: String,
    pub scores: BTreeMap<String, BTreeMap<Version, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub raters: Vec<RaterSummary>,
    pub patients: Vec<PatientRow>,
    /// Some known session is not finished.
    pub partial: bool,
    pub incomplete_sessions: Vec<String>,
}

impl StudyReport {
    pub fn rater(&self, id: &str) -> Option<&RaterSummary> {
        self.raters.iter().find(|r| r.rater_id == id)
    }
}

/// Orders `P_2` before `P_10`: compares digit runs numerically.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut x, mut y) = (a.as_bytes(), b.as_bytes());
    loop {
        match (x.first(), y.first()) {
            (None, None) => return a.cmp(b),
            (None, _) => return Ordering::Less,
            (_, None) => return Ordering::Greater,
            (Some(c), Some(d)) if c.is_ascii_digit() && d.is_ascii_digit() => {
                let lx = x.iter().take_while(|c| c.is_ascii_digit()).count();
                let ly = y.iter().take_while(|c| c.is_ascii_digit()).count();
                let nx = std::str::from_utf8(&x[..lx]).unwrap().trim_start_matches('0');
                let ny = std::str::from_utf8(&y[..ly]).unwrap().trim_start_matches('0');
                let ord = nx.len().cmp(&ny.len()).then_with(|| nx.cmp(ny));
                if ord != Ordering::Equal {
                    return ord;
                }
                x = &x[lx..];
                y = &y[ly..];
            }
            (Some(c), Some(d)) => {
                if c != d {
                    return c.cmp(d);
                }
                x = &x[1..];
                y = &y[1..];
            }
        }
    }
}

fn mean(scores: &[u8]) -> Option<f64> {
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().map(|&s| s as u64).sum::<u64>() as f64 / scores.len() as f64)
    }
}

/// Groups records by rater and version. When `sessions` is given, every
/// record must belong to one of them and unfinished sessions mark the report
/// partial. The result does not depend on record order.
pub fn aggregate(records: &[ScoreRecord], sessions: Option<&[SessionSummary]>) -> Result<StudyReport> {
    if let Some(known) = sessions {
        let ids: BTreeSet<&str> = known.iter().map(|s| s.id.as_str()).collect();
        if let Some(r) = records.iter().find(|r| !ids.contains(r.session_id.as_str())) {
            return Err(StudyError::UnknownRecordSession(r.session_id.clone()));
        }
    }
    let mut sorted: Vec<&ScoreRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        natural_cmp(&a.patient_id, &b.patient_id)
            .then_with(|| a.rater_id.cmp(&b.rater_id))
            .then_with(|| a.version.cmp(&b.version))
            .then_with(|| a.score.cmp(&b.score))
    });

    let mut by_rater: BTreeMap<&str, BTreeMap<Version, Vec<u8>>> = BTreeMap::new();
    let mut cells: BTreeMap<&str, BTreeMap<String, BTreeMap<Version, Vec<u8>>>> = BTreeMap::new();
    for r in &sorted {
        by_rater
            .entry(&r.rater_id)
            .or_default()
            .entry(r.version)
            .or_default()
            .push(r.score);
        cells
            .entry(&r.patient_id)
            .or_default()
            .entry(r.rater_id.clone())
            .or_default()
            .entry(r.version)
            .or_default()
            .push(r.score);
    }

    let raters = by_rater
        .into_iter()
        .map(|(rater, mut versions)| RaterSummary {
            rater_id: rater.to_string(),
            versions: VERSIONS
                .iter()
                .map(|&v| {
                    let scores = versions.remove(&v).unwrap_or_default();
                    VersionStats {
                        version: v,
                        mean: mean(&scores),
                        scores,
                    }
                })
                .collect(),
        })
        .collect();

    let mut patients: Vec<PatientRow> = cells
        .into_iter()
        .map(|(p, raters)| PatientRow {
            patient_id: p.to_string(),
            scores: raters
                .into_iter()
                .map(|(r, vs)| {
                    let row = vs.into_iter().map(|(v, s)| (v, mean(&s).unwrap())).collect();
                    (r, row)
                })
                .collect(),
        })
        .collect();
    patients.sort_by(|a, b| natural_cmp(&a.patient_id, &b.patient_id));

    let mut incomplete_sessions = Vec::new();
    if let Some(known) = sessions {
        for s in known {
            let n = records.iter().filter(|r| r.session_id == s.id).count();
            if n < s.total {
                incomplete_sessions.push(s.id.clone());
            }
        }
    }
    Ok(StudyReport {
        raters,
        patients,
        partial: !incomplete_sessions.is_empty(),
        incomplete_sessions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(session: &str, rater: &str, patient: &str, version: Version, score: u8) -> ScoreRecord {
        ScoreRecord {
            session_id: session.into(),
            rater_id: rater.into(),
            token: format!("{patient}-{version}"),
            patient_id: patient.into(),
            version,
            score,
            timestamp: 0.0,
        }
    }

    #[test]
    fn single_record_mean() {
        let r = aggregate(&[rec("s", "a", "p", Version::Full, 6)], None).unwrap();
        assert_eq!(r.rater("a").unwrap().mean(Version::Full), Some(6.0));
        assert_eq!(r.rater("a").unwrap().mean(Version::Quarter), None);
        assert!(!r.partial);
    }

    #[test]
    fn natural_order() {
        let mut ids = vec!["P_10", "P_2", "P_1", "P_9"];
        ids.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(ids, vec!["P_1", "P_2", "P_9", "P_10"]);
    }

    #[test]
    fn unknown_session_and_partial() {
        let records = vec![
            rec("s1", "a", "p1", Version::Full, 5),
            rec("s1", "a", "p1", Version::Quarter, 3),
        ];
        let s1 = SessionSummary {
            id: "s1".into(),
            rater_id: "a".into(),
            total: 3,
        };
        let r = aggregate(&records, Some(std::slice::from_ref(&s1))).unwrap();
        assert!(r.partial);
        assert_eq!(r.incomplete_sessions, vec!["s1"]);
        let other = SessionSummary { id: "s2".into(), ..s1 };
        assert!(matches!(
            aggregate(&records, Some(&[other])),
            Err(StudyError::UnknownRecordSession(_))
        ));
    }

    #[test]
    fn order_invariant() {
        let mut records = Vec::new();
        for (i, p) in ["P_1", "P_2", "P_10"].iter().enumerate() {
            for (k, v) in VERSIONS.iter().enumerate() {
                records.push(rec("s", "a", p, *v, (1 + i * 3 + k) as u8));
                records.push(rec("t", "b", p, *v, (10 - i * 3 - k) as u8));
            }
        }
        let a = aggregate(&records, None).unwrap();
        records.reverse();
        records.swap(1, 7);
        assert_eq!(aggregate(&records, None).unwrap(), a);
        assert_eq!(a.patients[2].patient_id, "P_10");
        assert_eq!(a.rater("a").unwrap().versions[0].scores, vec![1, 4, 7]);
    }
}
