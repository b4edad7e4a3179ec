use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureWindow, Result};

/// Time/frequency masking parameters. Width ranges are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub apply_prob: f64,
    pub freq_width: (usize, usize),
    pub time_width: (usize, usize),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            apply_prob: 0.5,
            freq_width: (2, 8),
            time_width: (5, 10),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(FeatureError::Config(format!("mask probability {} outside [0, 1]", self.apply_prob)));
        }
        for (name, (lo, hi)) in [("frequency", self.freq_width), ("time", self.time_width)] {
            if lo == 0 || lo > hi {
                return Err(FeatureError::Config(format!("{name} mask widths must satisfy 1 <= min <= max")));
            }
        }
        Ok(())
    }
}

/// A contiguous band `[start, start + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub start: usize,
    pub width: usize,
}

/// Which cells a masking pass zeroes: a column band, a row band, or neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskPlan {
    pub freq: Option<Band>,
    pub time: Option<Band>,
}

fn draw_band(rng: &mut impl Rng, (lo, hi): (usize, usize), extent: usize) -> Option<Band> {
    let width = rng.gen_range(lo..=hi).min(extent);
    if width == 0 {
        return None;
    }
    let start = rng.gen_range(0..=extent - width);
    Some(Band { start, width })
}

/// Each mask family is applied independently with probability
/// `cfg.apply_prob`; widths are uniform over the configured range and the
/// band start is uniform over positions where the band fits.
pub fn draw_masks(cfg: &AugmentConfig, frames: usize, columns: usize, rng: &mut impl Rng) -> MaskPlan {
    let freq = if rng.gen_bool(cfg.apply_prob) {
        draw_band(rng, cfg.freq_width, columns)
    } else {
        None
    };
    let time = if rng.gen_bool(cfg.apply_prob) {
        draw_band(rng, cfg.time_width, frames)
    } else {
        None
    };
    MaskPlan { freq, time }
}

/// Returns a masked copy; masked cells become 0.
pub fn apply_masks(fw: &FeatureWindow, plan: &MaskPlan) -> FeatureWindow {
    let mut out = fw.clone();
    let cols = out.columns();
    if let Some(Band { start, width }) = plan.freq {
        let end = (start + width).min(cols);
        for row in out.data.chunks_exact_mut(cols) {
            row[start.min(end)..end].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    if let Some(Band { start, width }) = plan.time {
        let end = (start + width).min(out.frames);
        out.data[start.min(end) * cols..end * cols].iter_mut().for_each(|v| *v = 0.0);
    }
    out
}

pub fn spec_augment(fw: &FeatureWindow, cfg: &AugmentConfig, rng: &mut impl Rng) -> FeatureWindow {
    let plan = draw_masks(cfg, fw.frames, fw.columns(), rng);
    apply_masks(fw, &plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FEATURE_DIM;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ones() -> FeatureWindow {
        FeatureWindow::new(vec![1.0; 98 * FEATURE_DIM], 98, 0.0, "r").unwrap()
    }

    #[test]
    fn empty_plan_is_identity() {
        let fw = ones();
        assert_eq!(apply_masks(&fw, &MaskPlan::default()), fw);
        let never = AugmentConfig {
            apply_prob: 0.0,
            ..AugmentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(spec_augment(&fw, &never, &mut rng), fw);
    }

    #[test]
    fn frequency_mask_zeroes_exactly_its_band() {
        let fw = ones();
        let plan = MaskPlan {
            freq: Some(Band { start: 0, width: 8 }),
            time: None,
        };
        let out = apply_masks(&fw, &plan);
        for r in 0..98 {
            for c in 0..FEATURE_DIM {
                assert_eq!(out.get(r, c), if c < 8 { 0.0 } else { 1.0 });
            }
        }
        assert!(fw.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn drawn_masks_fit_and_respect_ranges() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let plan = draw_masks(&cfg, 98, FEATURE_DIM, &mut rng);
            if let Some(b) = plan.freq {
                assert!((2..=8).contains(&b.width) && b.start + b.width <= FEATURE_DIM);
            }
            if let Some(b) = plan.time {
                assert!((5..=10).contains(&b.width) && b.start + b.width <= 98);
            }
        }
    }

    #[test]
    fn time_mask_rate_matches_probability() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let hits = (0..10_000)
            .filter(|_| draw_masks(&cfg, 98, FEATURE_DIM, &mut rng).time.is_some())
            .count();
        let rate = hits as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&rate), "{rate}");
    }
}
