use std::f64::consts::PI;

use super::{FeatureError, Result};

/// Symmetric Hamming window `0.54 - 0.46 cos(2 pi n / (N - 1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos()).collect()
}

/// Number of frames: `floor((n - frame) / step) + 1`.
pub fn frame_count(n: usize, frame: usize, step: usize) -> usize {
    if frame == 0 || n < frame {
        0
    } else {
        (n - frame) / step.max(1) + 1
    }
}

/// Splits `samples` into Hamming-weighted frames of `frame_len` samples,
/// `step` samples apart.
pub fn frame_signal(samples: &[f64], frame_len: usize, step: usize) -> Result<Vec<Vec<f64>>> {
    if frame_len == 0 || step == 0 {
        return Err(FeatureError::Config("frame length and step must be positive".into()));
    }
    if frame_len > samples.len() {
        return Err(FeatureError::FrameTooLong {
            frame: frame_len,
            signal: samples.len(),
        });
    }
    let window = hamming(frame_len);
    Ok((0..frame_count(samples.len(), frame_len, step))
        .map(|f| {
            samples[f * step..f * step + frame_len]
                .iter()
                .zip(&window)
                .map(|(x, w)| x * w)
                .collect()
        })
        .collect())
}
