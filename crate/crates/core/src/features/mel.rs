use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureError, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Power spectrum `|X_k|^2 / n_fft` for bins `0..=n_fft/2` of a zero-padded
/// real frame.
#[derive(Clone)]
pub struct PowerSpectrum {
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for PowerSpectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PowerSpectrum").field("n_fft", &self.n_fft).finish()
    }
}

impl PowerSpectrum {
    /// FFT size is the next power of two at or above `frame_len`.
    pub fn for_frame(frame_len: usize) -> Self {
        let n_fft = frame_len.max(1).next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Self { n_fft, fft }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn compute(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for (b, &x) in buf.iter_mut().zip(frame) {
            b.re = x;
        }
        self.fft.process(&mut buf);
        buf[..self.bins()].iter().map(|c| c.norm_sqr() / self.n_fft as f64).collect()
    }
}

/// Triangular filters equally spaced on the mel scale. Each triangle is
/// evaluated at the exact frequency of every FFT bin, so narrow low-frequency
/// filters still receive weight.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_filters` rows of `bins` weights.
    pub weights: Vec<Vec<f64>>,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, n_fft: usize, sample_rate_hz: f64, f_lo: f64, f_hi: f64) -> Result<Self> {
        let nyquist = sample_rate_hz / 2.0;
        if f_hi > nyquist + 1e-9 {
            return Err(FeatureError::BandAboveNyquist { f_hi, nyquist });
        }
        if n_filters == 0 || f_lo < 0.0 || f_lo >= f_hi {
            return Err(FeatureError::Config(format!(
                "need at least one filter over a non-empty band, got {n_filters} over [{f_lo}, {f_hi}]"
            )));
        }
        let (m_lo, m_hi) = (hz_to_mel(f_lo), hz_to_mel(f_hi));
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_filters + 1) as f64))
            .collect();
        let bins = n_fft / 2 + 1;
        let bin_hz = sample_rate_hz / n_fft as f64;
        let weights = (0..n_filters)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            weights,
            centers_hz: edges[1..=n_filters].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Natural log of each filter energy, floored at `floor` first.
    pub fn log_energies(&self, power: &[f64], floor: f64) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| {
                let e: f64 = w.iter().zip(power).map(|(a, b)| a * b).sum();
                e.max(floor).ln()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn mel_scale_anchor_and_inverse() {
        assert!((hz_to_mel(700.0) - 781.172_8).abs() < 1e-3);
        for f in [0.0, 80.0, 1000.0, 2000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn spectrum_size_and_parseval() {
        let ps = PowerSpectrum::for_frame(100);
        assert_eq!(ps.n_fft(), 128);
        let x: Vec<f64> = (0..100).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let p = ps.compute(&x);
        // one-sided sum: interior bins count twice
        let total: f64 = p[0] + p[64] + 2.0 * p[1..64].iter().sum::<f64>();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        assert!((total - energy).abs() < 1e-9 * energy);
    }

    #[test]
    fn tone_peaks_at_nearest_filter() {
        let ps = PowerSpectrum::for_frame(100);
        let bank = MelFilterbank::new(26, 128, 4000.0, 0.0, 2000.0).unwrap();
        let w = crate::features::hamming(100);
        let frame: Vec<f64> = (0..100).map(|i| (2.0 * PI * 1000.0 * i as f64 / 4000.0).sin() * w[i]).collect();
        let e = bank.log_energies(&ps.compute(&frame), 1e-10);
        let argmax = (0..26).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
        let nearest = (0..26)
            .min_by(|&a, &b| (bank.centers_hz[a] - 1000.0).abs().total_cmp(&(bank.centers_hz[b] - 1000.0).abs()))
            .unwrap();
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn silence_hits_the_floor() {
        let bank = MelFilterbank::new(26, 128, 4000.0, 0.0, 2000.0).unwrap();
        let e = bank.log_energies(&[0.0; 65], 1e-10);
        assert!(e.iter().all(|v| (v - 1e-10f64.ln()).abs() < 1e-12));
        assert!((1e-10f64.ln() + 23.025_85).abs() < 1e-4);
    }

    #[test]
    fn every_filter_has_weight_and_band_is_checked() {
        let bank = MelFilterbank::new(26, 128, 4000.0, 0.0, 2000.0).unwrap();
        assert!(bank.weights.iter().all(|w| w.iter().any(|&v| v > 0.0)));
        assert!(matches!(
            MelFilterbank::new(26, 128, 4000.0, 0.0, 2500.0),
            Err(FeatureError::BandAboveNyquist { .. })
        ));
    }
}
