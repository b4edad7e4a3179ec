//! Offline band-limited resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use super::{AudioClip, AudioError, Result};

/// Zero crossings of the sinc on each side of the kernel centre.
const ZERO_CROSSINGS: f64 = 32.0;
/// Fraction of the lower Nyquist frequency kept by the anti-alias filter.
const ROLLOFF: f64 = 0.95;
const KAISER_BETA: f64 = 8.6;

/// Modified Bessel function of the first kind, order 0 (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Resamples to `target_hz`. Output length is `round(n * target / source)`;
/// samples outside the clip are treated as zero, so the first and last few
/// milliseconds carry edge effects.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip> {
    if target_hz == 0 {
        return Err(AudioError::BadSampleRate(0));
    }
    if clip.is_empty() {
        return Err(AudioError::EmptyRecording);
    }
    let source_hz = clip.sample_rate_hz;
    if source_hz == target_hz {
        return Ok(clip.clone());
    }
    let n_in = clip.samples.len();
    let n_out = ((n_in as u64 * target_hz as u64 + source_hz as u64 / 2) / source_hz as u64).max(1) as usize;

    // cutoff in cycles per input sample
    let ratio = target_hz as f64 / source_hz as f64;
    let fc = 0.5 * ratio.min(1.0) * ROLLOFF;
    let half_width = ZERO_CROSSINGS / (2.0 * fc);
    let norm = bessel_i0(KAISER_BETA);
    let kernel = |tau: f64| -> f64 {
        let r = tau / half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm;
        2.0 * fc * sinc(2.0 * fc * tau) * w
    };

    let step = source_hz as f64 / target_hz as f64;
    let samples = (0..n_out)
        .map(|n| {
            let u = n as f64 * step;
            let lo = (u - half_width).ceil().max(0.0) as usize;
            let hi = ((u + half_width).floor() as usize).min(n_in - 1);
            (lo..=hi).map(|k| clip.samples[k] * kernel(u - k as f64)).sum()
        })
        .collect();
    AudioClip::new(samples, target_hz)
}
