//! Seeded synthetic lung-sound recordings with exact ground truth.
//!
//! Each breathing cycle holds an inhalation (band-limited noise, 200-600 Hz,
//! rising envelope) followed by an exhalation (same band, falling envelope,
//! 6 dB quieter). Wheezes are 350-450 Hz tones laid over an inhalation and
//! crackles are 5-15 ms decaying wideband transients. Low-level white noise
//! and 50 Hz mains hum sit underneath everything.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedRecording, AudioClip, AudioError, EventInterval, Label, Result};

/// Taper length at both ends of every burst.
const TAPER_S: f64 = 0.010;
const BAND_LO_HZ: f64 = 200.0;
const BAND_HI_HZ: f64 = 600.0;
const BAND_PARTIALS: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub duration_s: f64,
    pub breaths_per_min: f64,
    /// Chance that an inhalation carries a wheeze.
    pub wheeze_prob: f64,
    /// Mean number of crackles per inhalation.
    pub crackles_per_breath: f64,
    /// RMS of the background white noise.
    pub noise_level: f64,
    /// Amplitude of the 50 Hz hum.
    pub hum_level: f64,
    pub sample_rate_hz: u32,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            duration_s: 20.0,
            breaths_per_min: 15.0,
            wheeze_prob: 0.0,
            crackles_per_breath: 0.0,
            noise_level: 0.01,
            hum_level: 0.02,
            sample_rate_hz: 4000,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AudioError::Scenario(m.to_string()));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.breaths_per_min > 0.0) {
            return bad("breathing rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.wheeze_prob) {
            return bad("wheeze probability must lie in [0, 1]");
        }
        if self.crackles_per_breath < 0.0 || self.noise_level < 0.0 || self.hum_level < 0.0 {
            return bad("levels and rates must be non-negative");
        }
        if self.sample_rate_hz == 0 {
            return bad("sample rate must be positive");
        }
        Ok(())
    }

    /// The per-recording scenario used by the corpus generator: breathing
    /// rate between 12 and 18 per minute, wheezes on half the inhalations,
    /// about one crackle per breath.
    pub fn for_corpus(rng: &mut impl Rng, duration_s: f64) -> Self {
        Self {
            duration_s,
            breaths_per_min: rng.gen_range(12.0..18.0),
            wheeze_prob: 0.5,
            crackles_per_breath: 1.0,
            ..Self::default()
        }
    }
}

/// Raised-cosine fade-in/out of `taper` samples over a burst of `len`.
fn taper(i: usize, len: usize, taper: usize) -> f64 {
    let edge = i.min(len - 1 - i);
    if edge >= taper {
        1.0
    } else {
        0.5 - 0.5 * (PI * (edge as f64 + 0.5) / taper as f64).cos()
    }
}

struct Span {
    start: usize,
    end: usize,
}

impl Span {
    fn len(&self) -> usize {
        self.end - self.start
    }
}

fn add_band_noise(out: &mut [f64], span: &Span, rng: &mut ChaCha8Rng, envelope: impl Fn(f64) -> f64, rate: f64) {
    let partials: Vec<(f64, f64)> = (0..BAND_PARTIALS)
        .map(|_| (rng.gen_range(BAND_LO_HZ..BAND_HI_HZ), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let norm = (2.0 / BAND_PARTIALS as f64).sqrt();
    let taper_n = (TAPER_S * rate).round() as usize;
    let len = span.len();
    for i in 0..len {
        let t = i as f64 / rate;
        let s: f64 = partials.iter().map(|&(f, ph)| (2.0 * PI * f * t + ph).sin()).sum();
        let progress = i as f64 / (len - 1).max(1) as f64;
        out[span.start + i] += norm * s * envelope(progress) * taper(i, len, taper_n);
    }
}

fn add_tone(out: &mut [f64], span: &Span, freq: f64, amp: f64, rate: f64) {
    let taper_n = (TAPER_S * rate).round() as usize;
    let len = span.len();
    for i in 0..len {
        let t = i as f64 / rate;
        out[span.start + i] += amp * (2.0 * PI * freq * t).sin() * taper(i, len, taper_n);
    }
}

fn add_crackle(out: &mut [f64], span: &Span, amp: f64, rng: &mut ChaCha8Rng) {
    let len = span.len();
    let tau = len as f64 / 4.0;
    for i in 0..len {
        let n: f64 = rng.gen_range(-1.0..1.0);
        out[span.start + i] += amp * (-(i as f64) / tau).exp() * n;
    }
}

/// Builds one recording. Output is a pure function of `(seed, scenario)`.
pub fn synthesize_recording(seed: u64, scenario: &Scenario) -> Result<AnnotatedRecording> {
    scenario.validate()?;
    let rate = scenario.sample_rate_hz as f64;
    let n = (scenario.duration_s * rate).round() as usize;
    if n == 0 {
        return Err(AudioError::Scenario("duration shorter than one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; n];
    let mut events = Vec::new();
    let to_sample = |t: f64| ((t * rate).round() as usize).min(n);

    let period = 60.0 / scenario.breaths_per_min;
    let cycles = (scenario.duration_s / period + 1e-9).floor() as usize;
    let gain = rng.gen_range(0.16..0.24);
    for c in 0..cycles {
        let c0 = c as f64 * period;
        let lead = rng.gen_range(0.05..0.10) * period;
        let inh = rng.gen_range(0.35..0.42) * period;
        let pause = rng.gen_range(0.04..0.08) * period;
        let exh = rng.gen_range(0.33..0.40) * period;

        let inh_span = Span {
            start: to_sample(c0 + lead),
            end: to_sample(c0 + lead + inh),
        };
        let exh_span = Span {
            start: to_sample(c0 + lead + inh + pause),
            end: to_sample(c0 + lead + inh + pause + exh),
        };
        add_band_noise(&mut x, &inh_span, &mut rng, |u| gain * (0.25 + 0.75 * u), rate);
        add_band_noise(&mut x, &exh_span, &mut rng, |u| 0.5 * gain * (1.0 - 0.75 * u), rate);
        for (span, label) in [(&inh_span, Label::Inhalation), (&exh_span, Label::Exhalation)] {
            events.push(EventInterval::new(span.start as f64 / rate, span.end as f64 / rate, label)?);
        }

        // a wheeze spans its whole inhalation phase
        if rng.gen_bool(scenario.wheeze_prob) {
            let span = Span {
                start: inh_span.start,
                end: inh_span.end,
            };
            let freq = rng.gen_range(350.0..450.0);
            add_tone(&mut x, &span, freq, gain * rng.gen_range(0.5..0.8), rate);
            events.push(EventInterval::new(span.start as f64 / rate, span.end as f64 / rate, Label::Wheeze)?);
        }

        let crackles = (scenario.crackles_per_breath * 2.0 * rng.gen_range(0.0..1.0)).round() as usize;
        let mut placed: Vec<Span> = Vec::new();
        for _ in 0..crackles {
            for _attempt in 0..20 {
                let width = to_sample(rng.gen_range(0.005..0.015)).max(1);
                let start = rng.gen_range(inh_span.start..inh_span.end.saturating_sub(width).max(inh_span.start + 1));
                let span = Span {
                    start,
                    end: start + width,
                };
                if placed.iter().all(|p| span.end <= p.start || span.start >= p.end) {
                    placed.push(span);
                    break;
                }
            }
        }
        placed.sort_by_key(|s| s.start);
        for span in &placed {
            let amp = gain * rng.gen_range(2.0..4.0);
            add_crackle(&mut x, span, amp, &mut rng);
            events.push(EventInterval::new(span.start as f64 / rate, span.end as f64 / rate, Label::Crackle)?);
        }
    }

    if scenario.noise_level > 0.0 {
        let scale = scenario.noise_level * 3f64.sqrt();
        x.iter_mut().for_each(|v| *v += scale * rng.gen_range(-1.0..1.0));
    }
    if scenario.hum_level > 0.0 {
        let phase = rng.gen_range(0.0..2.0 * PI);
        for (i, v) in x.iter_mut().enumerate() {
            *v += scenario.hum_level * (2.0 * PI * 50.0 * i as f64 / rate + phase).sin();
        }
    }

    let mut clip = AudioClip::new(x, scenario.sample_rate_hz)?;
    clip.limit_peak(0.99);
    events.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.label.cmp(&b.label)));
    let rec = AnnotatedRecording {
        id: format!("synth-{seed:016x}"),
        clip,
        events,
    };
    rec.validate()?;
    Ok(rec)
}

/// One recording in a corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub wav: PathBuf,
    pub annotations: PathBuf,
}

/// JSON manifest written next to a generated corpus. Paths are relative to
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub recordings: Vec<ManifestEntry>,
}
