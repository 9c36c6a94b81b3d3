//! Labeled comparison scores and the score CSV format.
//!
//! ```text
//! # key=value            optional provenance lines
//! pair_id,label,score
//! 001_left_nir_11|001_left_vis_12,genuine,-12.345678901234567
//! ```
//!
//! Scores are oriented so that higher means more likely genuine.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Impostor,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Impostor => "impostor",
        }
    }

    pub fn is_genuine(self) -> bool {
        self == Label::Genuine
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genuine" => Ok(Label::Genuine),
            "impostor" => Ok(Label::Impostor),
            _ => Err(Error::InvalidInput(format!("unknown label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub pair_id: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub protocol_name: String,
    pub entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(protocol_name: impl Into<String>, entries: Vec<ScoreEntry>) -> Result<Self> {
        let protocol_name = protocol_name.into();
        if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::NonFinite(format!("score of {}", e.pair_id)));
        }
        Ok(ScoreSet {
            protocol_name,
            entries,
        })
    }

    /// Builds a set from parallel score/label slices with generated pair ids.
    pub fn from_scores(protocol_name: impl Into<String>, genuine: &[f64], impostor: &[f64]) -> Result<Self> {
        let entries = genuine
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoreEntry {
                pair_id: format!("g{i}"),
                label: Label::Genuine,
                score: s,
            })
            .chain(impostor.iter().enumerate().map(|(i, &s)| ScoreEntry {
                pair_id: format!("i{i}"),
                label: Label::Impostor,
                score: s,
            }))
            .collect();
        Self::new(protocol_name, entries)
    }

    /// Always true: every producer in this crate orients scores this way.
    pub const fn higher_is_genuine(&self) -> bool {
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn genuine(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().filter(|e| e.label.is_genuine()).map(|e| e.score)
    }

    pub fn impostor(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().filter(|e| !e.label.is_genuine()).map(|e| e.score)
    }

    pub fn counts(&self) -> (usize, usize) {
        let g = self.entries.iter().filter(|e| e.label.is_genuine()).count();
        (g, self.entries.len() - g)
    }

    pub fn require_both_labels(&self) -> Result<()> {
        let (g, i) = self.counts();
        if g == 0 || i == 0 {
            return Err(Error::SingleLabel {
                name: self.protocol_name.clone(),
            });
        }
        Ok(())
    }

    /// Applies `f` to every score (used for rank-invariance checks and calibration).
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|e| ScoreEntry {
                score: f(e.score),
                ..e.clone()
            })
            .collect();
        Self::new(self.protocol_name.clone(), entries)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, provenance: &[(String, String)]) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut out = String::new();
        out.push_str(&format!("# protocol={}\n", self.protocol_name));
        for (k, v) in provenance {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str("pair_id,label,score\n");
        for e in &self.entries {
            if e.pair_id.contains([',', '\n', '"']) {
                return Err(Error::InvalidInput(format!("pair id {:?} needs quoting", e.pair_id)));
            }
            out.push_str(&format!("{},{},{}\n", e.pair_id, e.label, format_score(e.score)));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a score CSV. The protocol name comes from a `# protocol=` line
    /// when present, else from the file stem.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            reason,
        };
        let mut name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut header_seen = false;
        let mut entries = Vec::new();
        for (no, line) in lines.by_ref() {
            if let Some(c) = line.strip_prefix('#') {
                if let Some(p) = c.trim().strip_prefix("protocol=") {
                    name = p.to_string();
                }
                continue;
            }
            if !header_seen {
                if line.trim() != "pair_id,label,score" {
                    return Err(malformed(format!("line {}: expected header pair_id,label,score", no + 1)));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [id, label, score] = fields.as_slice() else {
                return Err(malformed(format!("line {}: expected 3 fields", no + 1)));
            };
            let label: Label = label
                .trim()
                .parse()
                .map_err(|e: Error| malformed(format!("line {}: {e}", no + 1)))?;
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|_| malformed(format!("line {}: bad score {score:?}", no + 1)))?;
            entries.push(ScoreEntry {
                pair_id: id.to_string(),
                label,
                score,
            });
        }
        if !header_seen {
            return Err(malformed("missing header".into()));
        }
        Self::new(name, entries)
    }
}

/// Plain decimal with 17 significant digits (exact `f64` round trip).
pub fn format_score(x: f64) -> String {
    if x == 0.0 {
        return "0.0000000000000000".to_string();
    }
    let e = x.abs().log10().floor() as i32;
    let decimals = (16 - e).clamp(0, 340) as usize;
    format!("{x:.decimals$}")
}

/// Concatenates the per-eye score sets of one protocol.
pub fn combine_eyes(left: &ScoreSet, right: &ScoreSet) -> Result<ScoreSet> {
    if left.protocol_name != right.protocol_name {
        return Err(Error::ProtocolMismatch {
            left: left.protocol_name.clone(),
            right: right.protocol_name.clone(),
        });
    }
    left.require_both_labels()?;
    right.require_both_labels()?;
    let mut entries = left.entries.clone();
    entries.extend(right.entries.iter().cloned());
    ScoreSet::new(left.protocol_name.clone(), entries)
}
