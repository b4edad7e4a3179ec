//! Window decisions to events, and event-level scoring.
//!
//! Window probabilities are averaged onto a grid of 0.5 s slots and
//! thresholded strictly above 0.5; maximal runs of positive slots become
//! predicted events. Predicted and reference events are paired one-to-one
//! by descending Jaccard overlap. A pair with overlap above 0.5 is a true
//! positive, every reference event not so paired is a false negative, and a
//! prediction that overlaps no reference event at all is a false positive.

mod report;

pub use report::{RecordingScore, ScoreReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{EventInterval, Label};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("window starting at {start_s} s is not on the {slot_s} s grid")]
    OffGrid { start_s: f64, slot_s: f64 },
    #[error("events [{a_start}, {a_end}) and [{b_start}, {b_end}) in one list overlap")]
    Overlap {
        a_start: f64,
        a_end: f64,
        b_start: f64,
        b_end: f64,
    },
    #[error("slot length, window length and duration must be positive")]
    BadGrid,
}

pub type Result<T> = std::result::Result<T, EvalError>;

const GRID_TOL: f64 = 1e-6;

/// Strict threshold: `p > 0.5`.
pub fn threshold(p: f64) -> u8 {
    u8::from(p > 0.5)
}

/// Per-slot decisions over a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub slot_s: f64,
    /// Mean probability of the windows covering each slot (0 if none).
    pub probs: Vec<f64>,
    pub slots: Vec<u8>,
}

/// Averages window probabilities onto `floor(duration / slot_s)` slots.
/// A window `[start, start + win_s)` covers every slot inside it; starts
/// must be multiples of `slot_s`.
pub fn assemble_timeline(window_probs: &[(f64, f64)], duration_s: f64, win_s: f64, slot_s: f64) -> Result<Timeline> {
    if !(slot_s > 0.0 && win_s > 0.0 && duration_s >= 0.0) {
        return Err(EvalError::BadGrid);
    }
    let n = (duration_s / slot_s + GRID_TOL).floor() as usize;
    let per_window = (win_s / slot_s).round() as usize;
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for &(start_s, p) in window_probs {
        let pos = start_s / slot_s;
        if (pos - pos.round()).abs() > GRID_TOL || start_s < 0.0 {
            return Err(EvalError::OffGrid { start_s, slot_s });
        }
        let first = pos.round() as usize;
        for s in first..(first + per_window).min(n) {
            sum[s] += p;
            count[s] += 1;
        }
    }
    let probs: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let slots = probs.iter().map(|&p| threshold(p)).collect();
    Ok(Timeline { slot_s, probs, slots })
}

/// Maximal runs of positive slots as events labelled `label`.
pub fn extract_events(timeline: &Timeline, label: Label) -> Vec<EventInterval> {
    let mut out = Vec::new();
    let mut run_start = None;
    for (i, &s) in timeline.slots.iter().chain(std::iter::once(&0)).enumerate() {
        match (s, run_start) {
            (1, None) => run_start = Some(i),
            (0, Some(a)) => {
                out.push(EventInterval {
                    start_s: a as f64 * timeline.slot_s,
                    end_s: i as f64 * timeline.slot_s,
                    label,
                });
                run_start = None;
            }
            _ => {}
        }
    }
    out
}

/// Slot labels from reference events: a slot is 1 when events cover more
/// than half of it.
pub fn events_to_slots(events: &[EventInterval], duration_s: f64, slot_s: f64) -> Vec<u8> {
    let n = (duration_s / slot_s + GRID_TOL).floor() as usize;
    (0..n)
        .map(|i| {
            let (a, b) = (i as f64 * slot_s, (i + 1) as f64 * slot_s);
            let covered: f64 = events.iter().map(|e| e.overlap_with(a, b)).sum();
            u8::from(covered > slot_s / 2.0)
        })
        .collect()
}

/// `|a ∩ b| / |a ∪ b|` on the time axis.
pub fn jaccard(a: &EventInterval, b: &EventInterval) -> f64 {
    let inter = a.overlap_with(b.start_s, b.end_s);
    let union = a.duration_s() + b.duration_s() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EventMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ppv: f64,
    pub se: f64,
    pub f1: f64,
    /// Set when the ratio's denominator was zero and it is reported as 0.
    pub ppv_undefined: bool,
    pub se_undefined: bool,
    pub f1_undefined: bool,
}

impl EventMetrics {
    /// Ratios from counts; `0/0` is reported as 0 and flagged.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: f64, den: f64| if den > 0.0 { (num / den, false) } else { (0.0, true) };
        let (ppv, ppv_undefined) = ratio(tp as f64, (tp + fp) as f64);
        let (se, se_undefined) = ratio(tp as f64, (tp + fn_) as f64);
        let (f1, f1_undefined) = ratio(2.0 * ppv * se, ppv + se);
        Self {
            tp,
            fp,
            fn_,
            ppv,
            se,
            f1,
            ppv_undefined,
            se_undefined,
            f1_undefined,
        }
    }

    /// Micro-average: sums counts, then recomputes the ratios.
    pub fn aggregate<'a>(items: impl IntoIterator<Item = &'a EventMetrics>) -> Self {
        let (tp, fp, fn_) = items
            .into_iter()
            .fold((0, 0, 0), |(a, b, c), m| (a + m.tp, b + m.fp, c + m.fn_));
        Self::from_counts(tp, fp, fn_)
    }
}

fn check_disjoint(events: &[EventInterval]) -> Result<()> {
    let mut sorted: Vec<&EventInterval> = events.iter().collect();
    sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    for w in sorted.windows(2) {
        if w[1].start_s < w[0].end_s {
            return Err(EvalError::Overlap {
                a_start: w[0].start_s,
                a_end: w[0].end_s,
                b_start: w[1].start_s,
                b_end: w[1].end_s,
            });
        }
    }
    Ok(())
}

/// Greedy one-to-one pairing by descending Jaccard (ties broken by list
/// order), then TP / FP / FN counting.
pub fn match_and_score(gt: &[EventInterval], pred: &[EventInterval]) -> Result<EventMetrics> {
    check_disjoint(gt)?;
    check_disjoint(pred)?;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, g) in gt.iter().enumerate() {
        for (j, p) in pred.iter().enumerate() {
            let jac = jaccard(g, p);
            if jac > 0.0 {
                pairs.push((jac, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut tp = 0;
    for (jac, i, j) in pairs {
        if gt_used[i] || pred_used[j] {
            continue;
        }
        gt_used[i] = true;
        pred_used[j] = true;
        if jac > 0.5 {
            tp += 1;
        }
    }
    let fp = pred
        .iter()
        .filter(|p| gt.iter().all(|g| g.overlap_with(p.start_s, p.end_s) == 0.0))
        .count();
    Ok(EventMetrics::from_counts(tp, fp, gt.len() - tp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(a: f64, b: f64) -> EventInterval {
        EventInterval::new(a, b, Label::Inhalation).unwrap()
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(threshold(0.51), 1);
        assert_eq!(threshold(0.5), 0);
        assert_eq!(threshold(0.49), 0);
    }

    #[test]
    fn timeline_averaging() {
        let t = assemble_timeline(&[(0.0, 0.9)], 1.0, 1.0, 0.5).unwrap();
        assert_eq!(t.slots, vec![1, 1]);
        let t = assemble_timeline(&[(0.0, 0.9), (0.5, 0.2)], 1.5, 1.0, 0.5).unwrap();
        assert!((t.probs[1] - 0.55).abs() < 1e-12);
        assert_eq!(t.slots, vec![1, 1, 0]);
        let t = assemble_timeline(&[(0.0, 0.6), (0.5, 0.4)], 1.5, 1.0, 0.5).unwrap();
        assert_eq!(t.slots[1], 0);
        assert!(matches!(
            assemble_timeline(&[(0.3, 0.9)], 2.0, 1.0, 0.5),
            Err(EvalError::OffGrid { .. })
        ));
    }

    #[test]
    fn runs_become_events() {
        let t = Timeline {
            slot_s: 0.5,
            probs: vec![],
            slots: vec![0, 1, 1, 0, 1],
        };
        assert_eq!(extract_events(&t, Label::Inhalation), vec![ev(0.5, 1.5), ev(2.0, 2.5)]);
        let none = Timeline {
            slot_s: 0.5,
            probs: vec![],
            slots: vec![0; 4],
        };
        assert!(extract_events(&none, Label::Inhalation).is_empty());
        let all = Timeline {
            slot_s: 0.5,
            probs: vec![],
            slots: vec![1; 6],
        };
        assert_eq!(extract_events(&all, Label::Inhalation), vec![ev(0.0, 3.0)]);
    }

    #[test]
    fn jaccard_anchors() {
        assert!((jaccard(&ev(0.0, 2.0), &ev(1.0, 3.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&ev(1.0, 2.0), &ev(1.0, 2.0)), 1.0);
        assert_eq!(jaccard(&ev(0.0, 1.0), &ev(2.0, 3.0)), 0.0);
    }

    #[test]
    fn identical_lists_score_perfectly() {
        let x = [ev(0.0, 1.0), ev(2.0, 3.0), ev(4.0, 5.5)];
        let m = match_and_score(&x, &x).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (3, 0, 0));
        assert_eq!((m.ppv, m.se, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ratio_arithmetic() {
        let m = EventMetrics::from_counts(3, 1, 2);
        assert!((m.ppv - 0.75).abs() < 1e-15);
        assert!((m.se - 0.6).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        let empty = EventMetrics::from_counts(0, 0, 0);
        assert_eq!((empty.ppv, empty.se, empty.f1), (0.0, 0.0, 0.0));
        assert!(empty.ppv_undefined && empty.se_undefined && empty.f1_undefined);
    }

    #[test]
    fn missed_and_spurious_events() {
        let gt = [ev(0.0, 1.0), ev(5.0, 6.0)];
        // weak overlap with the first, nothing near the second, one stray
        let pred = [ev(0.8, 2.0), ev(10.0, 11.0)];
        let m = match_and_score(&gt, &pred).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 2));
        let m = match_and_score(&gt, &[]).unwrap();
        assert_eq!((m.tp, m.fn_, m.se), (0, 2, 0.0));
    }

    #[test]
    fn overlapping_input_rejected() {
        assert!(matches!(
            match_and_score(&[ev(0.0, 2.0), ev(1.0, 3.0)], &[]),
            Err(EvalError::Overlap { .. })
        ));
    }

    #[test]
    fn micro_average_sums_counts() {
        let a = EventMetrics::from_counts(3, 1, 0);
        let b = EventMetrics::from_counts(1, 0, 3);
        let agg = EventMetrics::aggregate([&a, &b]);
        assert_eq!(agg, EventMetrics::from_counts(4, 1, 3));
    }
}
