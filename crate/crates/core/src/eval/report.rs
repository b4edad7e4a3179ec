use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EventMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingScore {
    pub recording_id: String,
    #[serde(flatten)]
    pub metrics: EventMetrics,
}

/// Per-recording scores and their micro-averaged aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_recording: Vec<RecordingScore>,
    pub aggregate: EventMetrics,
}

impl ScoreReport {
    pub fn new(per_recording: Vec<RecordingScore>) -> Self {
        let aggregate = EventMetrics::aggregate(per_recording.iter().map(|r| &r.metrics));
        Self {
            per_recording,
            aggregate,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per recording plus a final `aggregate` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("recording_id,tp,fp,fn,ppv,se,f1\n");
        let rows = self
            .per_recording
            .iter()
            .map(|r| (r.recording_id.as_str(), &r.metrics))
            .chain(std::iter::once(("aggregate", &self.aggregate)));
        for (id, m) in rows {
            writeln!(out, "{id},{},{},{},{},{},{}", m.tp, m.fp, m.fn_, m.ppv, m.se, m.f1).expect("string write");
        }
        out
    }
}
