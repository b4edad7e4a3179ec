//! Audio ingestion and pre-processing.
//!
//! Recordings are resampled to 4 kHz, high-passed at 80 Hz with a 10th-order
//! zero-phase Butterworth filter, and cut into 1 s windows with a 0.5 s hop.

mod annotation;
mod filter;
mod resample;
pub mod synth;
mod wav;
mod window;

pub use annotation::{read_annotations, write_annotations, AnnotationRecord, Label, Task};
pub use filter::{highpass, Biquad, ButterworthHighpass};
pub use resample::resample;
pub use synth::{synthesize_recording, Scenario};
pub use wav::{read_wav, write_wav};
pub use window::{extract_windows, window_count, window_label, Window};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("empty recording")]
    EmptyRecording,
    #[error("sample rate must be positive, got {0}")]
    BadSampleRate(i64),
    #[error("cutoff {cutoff_hz} Hz must lie below the Nyquist frequency {nyquist_hz} Hz")]
    CutoffAboveNyquist { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("filter order must be at least 1")]
    ZeroOrder,
    #[error("recording lasts {duration_s:.3} s, shorter than one {win_s} s window")]
    TooShort { duration_s: f64, win_s: f64 },
    #[error("invalid event [{start_s}, {end_s}) labelled {label:?}")]
    BadEvent { start_s: f64, end_s: f64, label: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("annotation line {line}: {reason}")]
    Annotation { line: usize, reason: String },
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Mono waveform in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(AudioError::BadSampleRate(0));
        }
        if samples.is_empty() {
            return Err(AudioError::EmptyRecording);
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Scales the clip down so that no sample exceeds `peak` in magnitude.
    /// Quieter clips are left untouched.
    pub fn limit_peak(&mut self, peak: f64) {
        let max = self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max > peak {
            let g = peak / max;
            self.samples.iter_mut().for_each(|v| *v *= g);
        }
    }
}

/// A labelled span on a recording's timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub label: Label,
}

impl EventInterval {
    pub fn new(start_s: f64, end_s: f64, label: Label) -> Result<Self> {
        if !(start_s >= 0.0 && end_s > start_s && end_s.is_finite()) {
            return Err(AudioError::BadEvent {
                start_s,
                end_s,
                label: label.as_str().to_string(),
            });
        }
        Ok(Self { start_s, end_s, label })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Length of the intersection with `[start, end)`.
    pub fn overlap_with(&self, start: f64, end: f64) -> f64 {
        (self.end_s.min(end) - self.start_s.max(start)).max(0.0)
    }
}

/// A clip with its ground-truth events.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedRecording {
    pub id: String,
    pub clip: AudioClip,
    pub events: Vec<EventInterval>,
}

impl AnnotatedRecording {
    /// Checks that events lie inside the clip and that events sharing a
    /// label do not overlap.
    pub fn validate(&self) -> Result<()> {
        let duration = self.clip.duration_s();
        for e in &self.events {
            if e.start_s < 0.0 || e.end_s > duration + 1e-9 || e.end_s <= e.start_s {
                return Err(AudioError::BadEvent {
                    start_s: e.start_s,
                    end_s: e.end_s,
                    label: e.label.as_str().to_string(),
                });
            }
        }
        for label in Label::ALL {
            let mut same: Vec<&EventInterval> = self.events.iter().filter(|e| e.label == label).collect();
            same.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
            for pair in same.windows(2) {
                if pair[1].start_s < pair[0].end_s - 1e-12 {
                    return Err(AudioError::BadEvent {
                        start_s: pair[1].start_s,
                        end_s: pair[1].end_s,
                        label: format!("{} (overlaps previous)", label.as_str()),
                    });
                }
            }
        }
        Ok(())
    }

    /// Events whose label belongs to `task`; see [`task_events`].
    pub fn task_events(&self, task: Task) -> Vec<EventInterval> {
        task_events(&self.events, task)
    }
}

/// Events whose label belongs to `task`, sorted by start time.
/// Overlapping events of different member labels are merged into one event
/// carrying the task's own label, so the result never overlaps.
pub fn task_events(events: &[EventInterval], task: Task) -> Vec<EventInterval> {
    let mut matching: Vec<&EventInterval> = events.iter().filter(|e| task.matches(e.label)).collect();
    matching.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut out: Vec<EventInterval> = Vec::with_capacity(matching.len());
    for e in matching {
        match out.last_mut() {
            Some(last) if e.start_s < last.end_s => {
                last.end_s = last.end_s.max(e.end_s);
                last.label = task.label();
            }
            _ => out.push(e.clone()),
        }
    }
    out
}
