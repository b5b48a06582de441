use std::fmt;

use ldct_core::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Version {
    Full,
    Quarter,
    Enhanced,
}

pub const VERSIONS: [Version; 3] = [Version::Full, Version::Quarter, Version::Enhanced];

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Version::Full => "full",
            Version::Quarter => "quarter",
            Version::Enhanced => "enhanced",
        })
    }
}

/// 128-bit random hex string. Hex digits cannot spell any version name or an
/// id containing characters outside `0-9a-f`.
pub fn nonce() -> String {
    format!("{:032x}", rand::random::<u128>())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub token: String,
    pub patient: String,
    pub version: Version,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub scored: usize,
    pub total: usize,
}

/// One rater's forward-only pass over every (patient, version) item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySession {
    pub id: String,
    pub rater_id: String,
    pub seed: u64,
    pub items: Vec<Item>,
    pub cursor: usize,
}

impl StudySession {
    /// Items in a seeded random order, each under a fresh token.
    pub fn new(rater_id: &str, seed: u64, patients: &[String]) -> Self {
        let mut items: Vec<Item> = patients
            .iter()
            .flat_map(|p| {
                VERSIONS.iter().map(move |&v| Item {
                    token: String::new(),
                    patient: p.clone(),
                    version: v,
                })
            })
            .collect();
        Rng::new(seed).shuffle(&mut items);
        for item in &mut items {
            item.token = nonce();
        }
        Self {
            id: nonce(),
            rater_id: rater_id.to_string(),
            seed,
            items,
            cursor: 0,
        }
    }

    pub fn current(&self) -> Option<&Item> {
        self.items.get(self.cursor)
    }

    pub fn progress(&self) -> Progress {
        Progress {
            scored: self.cursor,
            total: self.items.len(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.items.len()
    }

    pub fn item(&self, token: &str) -> Option<(usize, &Item)> {
        self.items.iter().enumerate().find(|(_, i)| i.token == token)
    }

    pub fn order(&self) -> Vec<(String, Version)> {
        self.items.iter().map(|i| (i.patient.clone(), i.version)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patients(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("pair_{i:04}")).collect()
    }

    #[test]
    fn three_items_per_patient_each_once() {
        let s = StudySession::new("r", 1, &patients(4));
        assert_eq!(s.items.len(), 12);
        let mut order = s.order();
        order.sort();
        order.dedup();
        assert_eq!(order.len(), 12);
        assert_eq!(s.progress(), Progress { scored: 0, total: 12 });
    }

    #[test]
    fn seeded_order_fresh_tokens() {
        let a = StudySession::new("r", 5, &patients(10));
        let b = StudySession::new("r", 5, &patients(10));
        assert_eq!(a.order(), b.order());
        assert_ne!(a.items[0].token, b.items[0].token);
        assert_ne!(a.id, b.id);
        let c = StudySession::new("r", 6, &patients(10));
        assert_ne!(a.order(), c.order());
        assert!(a.items.iter().all(|i| i.token.len() == 32
            && i.token.bytes().all(|b| b.is_ascii_hexdigit())));
    }
}
