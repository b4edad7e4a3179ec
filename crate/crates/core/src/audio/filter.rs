//! Butterworth high-pass design as cascaded second-order sections, applied
//! forward and backward for zero phase.
//!
//! Analog prototype poles `exp(i*pi*(2k + N + 1) / 2N)` are mapped to the
//! high-pass with `s -> wc / s` and to the z-plane with the bilinear
//! transform (cutoff pre-warped). Every section has its zeros at `z = 1`
//! and unit gain at Nyquist.

use std::f64::consts::PI;

use super::{AudioClip, AudioError, Result};

/// Transposed direct-form II second-order section, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Filter state reached after a unit step has settled.
    fn step_state(&self) -> [f64; 2] {
        let [_, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y = self.dc_gain();
        let z2 = b2 - a2 * y;
        let z1 = b1 - a1 * y + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }

    /// Magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        let num = (self.b[0] + self.b[1] * c1 + self.b[2] * c2, -(self.b[1] * s1 + self.b[2] * s2));
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, -(self.a[0] * s1 + self.a[1] * s2));
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButterworthHighpass {
    pub sections: Vec<Biquad>,
}

impl ButterworthHighpass {
    pub fn design(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if order == 0 {
            return Err(AudioError::ZeroOrder);
        }
        let nyquist_hz = sample_rate_hz / 2.0;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist_hz) {
            return Err(AudioError::CutoffAboveNyquist { cutoff_hz, nyquist_hz });
        }
        let fs2 = 2.0 * sample_rate_hz;
        let wc = fs2 * (PI * cutoff_hz / sample_rate_hz).tan();
        let n = order as f64;
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for k in 0..order / 2 {
            let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            // high-pass pole wc / p with p = exp(i theta); |p| = 1 so wc * conj(p)
            let (sr, si) = (wc * theta.cos(), -wc * theta.sin());
            // bilinear: z = (fs2 + s) / (fs2 - s)
            let (nr, ni) = (fs2 + sr, si);
            let (dr, di) = (fs2 - sr, -si);
            let d = dr * dr + di * di;
            let zr = (nr * dr + ni * di) / d;
            let zi = (ni * dr - nr * di) / d;
            let a1 = -2.0 * zr;
            let a2 = zr * zr + zi * zi;
            let g = (1.0 - a1 + a2) / 4.0;
            sections.push(Biquad {
                b: [g, -2.0 * g, g],
                a: [a1, a2],
            });
        }
        if order % 2 == 1 {
            // real pole at s = -wc
            let zp = (fs2 - wc) / (fs2 + wc);
            let g = (1.0 + zp) / 2.0;
            sections.push(Biquad {
                b: [g, -g, 0.0],
                a: [-zp, 0.0],
            });
        }
        Ok(Self { sections })
    }

    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        self.sections.iter().map(|s| s.magnitude(freq_hz, sample_rate_hz)).product()
    }

    /// Causal filtering with the state initialised to the steady-state
    /// response to a step of height `x[0]`.
    fn forward(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else {
            return;
        };
        let mut level = x0;
        for s in &self.sections {
            let z = s.step_state();
            s.run(x, [z[0] * level, z[1] * level]);
            level *= s.dc_gain();
        }
    }

    /// Zero-phase filtering: forward pass, then a pass over the reversed
    /// output, on a signal padded at both ends by odd reflection.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.forward(&mut ext);
        ext.reverse();
        self.forward(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Zero-phase Butterworth high-pass of the given order.
pub fn highpass(clip: &AudioClip, cutoff_hz: f64, order: usize) -> Result<AudioClip> {
    let filter = ButterworthHighpass::design(order, cutoff_hz, clip.sample_rate_hz as f64)?;
    AudioClip::new(filter.filtfilt(&clip.samples), clip.sample_rate_hz)
}
