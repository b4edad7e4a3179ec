use super::{AudioClip, AudioError, EventInterval, Result, Task};

/// A fixed-length slice of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_s: f64,
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub source_id: String,
}

impl Window {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s()
    }
}

fn to_samples(seconds: f64, rate: u32) -> usize {
    (seconds * rate as f64).round() as usize
}

/// Number of full windows: `floor((duration - win) / hop) + 1`, or 0 when the
/// clip is shorter than one window.
pub fn window_count(n_samples: usize, rate: u32, win_s: f64, hop_s: f64) -> usize {
    let win = to_samples(win_s, rate);
    let hop = to_samples(hop_s, rate).max(1);
    if win == 0 || n_samples < win {
        return 0;
    }
    (n_samples - win) / hop + 1
}

/// Cuts the clip into windows starting at `0, hop, 2 hop, ...`. A trailing
/// partial window is dropped.
pub fn extract_windows(clip: &AudioClip, win_s: f64, hop_s: f64, source_id: &str) -> Result<Vec<Window>> {
    let rate = clip.sample_rate_hz;
    let win = to_samples(win_s, rate);
    let hop = to_samples(hop_s, rate).max(1);
    let count = window_count(clip.len(), rate, win_s, hop_s);
    if count == 0 {
        return Err(AudioError::TooShort {
            duration_s: clip.duration_s(),
            win_s,
        });
    }
    Ok((0..count)
        .map(|i| Window {
            start_s: (i * hop) as f64 / rate as f64,
            samples: clip.samples[i * hop..i * hop + win].to_vec(),
            sample_rate_hz: rate,
            source_id: source_id.to_string(),
        })
        .collect())
}

/// Total length of `[start, end)` covered by the union of task events.
fn covered(events: &[EventInterval], start: f64, end: f64, task: Task) -> f64 {
    let mut spans: Vec<(f64, f64)> = events
        .iter()
        .filter(|e| task.matches(e.label))
        .map(|e| (e.start_s.max(start), e.end_s.min(end)))
        .filter(|(a, b)| b > a)
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for (a, b) in spans {
        match current {
            Some((ca, cb)) if a <= cb => current = Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                current = Some((a, b));
            }
            None => current = Some((a, b)),
        }
    }
    if let Some((ca, cb)) = current {
        total += cb - ca;
    }
    total
}

/// Majority label: 1 when task events cover strictly more than half of the
/// window. Exact halves (within 1e-9 s) count as 0.
pub fn window_label(events: &[EventInterval], start_s: f64, win_s: f64, task: Task) -> u8 {
    u8::from(covered(events, start_s, start_s + win_s, task) > win_s / 2.0 + 1e-9)
}
