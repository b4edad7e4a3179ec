//! Event vocabulary and the JSON-lines annotation format.
//!
//! One object per line:
//! `{"recording_id": "...", "start_s": 1.25, "end_s": 2.5, "label": "inhalation"}`

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AudioError, EventInterval, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Inhalation,
    Exhalation,
    Cas,
    Das,
    Crackle,
    Wheeze,
}

impl Label {
    pub const ALL: [Label; 6] = [
        Label::Inhalation,
        Label::Exhalation,
        Label::Cas,
        Label::Das,
        Label::Crackle,
        Label::Wheeze,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Inhalation => "inhalation",
            Label::Exhalation => "exhalation",
            Label::Cas => "cas",
            Label::Das => "das",
            Label::Crackle => "crackle",
            Label::Wheeze => "wheeze",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = AudioError;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| AudioError::UnknownLabel(s.to_string()))
    }
}

/// A binary detection task: the set of labels counted as positive.
///
/// `cas` covers wheezes and `das` covers crackles, following the usual
/// continuous / discontinuous adventitious sound grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Inhalation,
    Exhalation,
    Cas,
    Das,
    Wheeze,
    Crackle,
}

impl Task {
    pub fn matches(self, label: Label) -> bool {
        matches!(
            (self, label),
            (Task::Inhalation, Label::Inhalation)
                | (Task::Exhalation, Label::Exhalation)
                | (Task::Cas, Label::Cas | Label::Wheeze)
                | (Task::Das, Label::Das | Label::Crackle)
                | (Task::Wheeze, Label::Wheeze)
                | (Task::Crackle, Label::Crackle)
        )
    }

    /// Label written on predicted events.
    pub fn label(self) -> Label {
        match self {
            Task::Inhalation => Label::Inhalation,
            Task::Exhalation => Label::Exhalation,
            Task::Cas => Label::Cas,
            Task::Das => Label::Das,
            Task::Wheeze => Label::Wheeze,
            Task::Crackle => Label::Crackle,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.label().as_str()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = AudioError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.parse::<Label>()? {
            Label::Inhalation => Task::Inhalation,
            Label::Exhalation => Task::Exhalation,
            Label::Cas => Task::Cas,
            Label::Das => Task::Das,
            Label::Wheeze => Task::Wheeze,
            Label::Crackle => Task::Crackle,
        })
    }
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub recording_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub label: Label,
}

impl AnnotationRecord {
    pub fn event(&self) -> Result<EventInterval> {
        EventInterval::new(self.start_s, self.end_s, self.label)
    }
}

/// Reads a JSON-lines annotation file, grouping events by recording id.
/// Blank lines are ignored.
pub fn read_annotations(path: &Path) -> Result<BTreeMap<String, Vec<EventInterval>>> {
    let file = fs::File::open(path).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out: BTreeMap<String, Vec<EventInterval>> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| AudioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| AudioError::Annotation {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let event = rec.event().map_err(|e| AudioError::Annotation {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.entry(rec.recording_id).or_default().push(event);
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, recording_id: &str, events: &[EventInterval]) -> Result<()> {
    let io = |source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for e in events {
        let rec = AnnotationRecord {
            recording_id: recording_id.to_string(),
            start_s: e.start_s,
            end_s: e.end_s,
            label: e.label,
        };
        let line = serde_json::to_string(&rec).expect("annotation serializes");
        writeln!(file, "{line}").map_err(io)?;
    }
    file.flush().map_err(io)
}
