//! Per-frame features for 1 s windows and training-time masking.
//!
//! Every frame is described by 65 values laid out as
//! `[MFCC c0..c12 | delta | delta-delta | 26 log mel energies]`, and each
//! column is min-max normalized within its window.

mod augment;
mod cache;
mod dct;
mod delta;
mod frame;
mod mel;

pub use augment::{apply_masks, draw_masks, spec_augment, AugmentConfig, Band, MaskPlan};
pub use cache::{featurize_cached, read_cache, write_cache};
pub use dct::Dct;
pub use delta::deltas;
pub use frame::{frame_count, frame_signal, hamming};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank, PowerSpectrum};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioClip, AudioError, Window};
use crate::tensor::Tensor;

/// Width of the default feature vector.
pub const FEATURE_DIM: usize = 65;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("frame of {frame} samples is longer than the {signal}-sample signal")]
    FrameTooLong { frame: usize, signal: usize },
    #[error("mel band upper edge {f_hi} Hz exceeds the Nyquist frequency {nyquist} Hz")]
    BandAboveNyquist { f_hi: f64, nyquist: f64 },
    #[error("invalid feature configuration: {0}")]
    Config(String),
    #[error("feature matrix of {len} values is not {frames} x {dim}")]
    Shape { len: usize, frames: usize, dim: usize },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt feature cache {path}: {reason}")]
    Cache { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Everything that determines a feature matrix, from raw audio onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate_hz: u32,
    pub highpass_hz: f64,
    pub highpass_order: usize,
    pub win_s: f64,
    pub hop_s: f64,
    pub frame_s: f64,
    pub step_s: f64,
    pub n_filters: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    pub n_mfcc: usize,
    pub delta_span: usize,
    pub energy_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 4000,
            highpass_hz: 80.0,
            highpass_order: 10,
            win_s: 1.0,
            hop_s: 0.5,
            frame_s: 0.025,
            step_s: 0.01,
            n_filters: 26,
            f_lo: 0.0,
            f_hi: 2000.0,
            n_mfcc: 13,
            delta_span: 2,
            energy_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn feature_dim(&self) -> usize {
        3 * self.n_mfcc + self.n_filters
    }

    pub fn frame_len(&self) -> usize {
        (self.frame_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn step_len(&self) -> usize {
        (self.step_s * self.sample_rate_hz as f64).round() as usize
    }

    /// Frames in one window.
    pub fn frames_per_window(&self) -> usize {
        let win = (self.win_s * self.sample_rate_hz as f64).round() as usize;
        frame_count(win, self.frame_len(), self.step_len())
    }
}

/// A `frames x dim` row-major feature matrix for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub data: Vec<f64>,
    pub frames: usize,
    pub dim: usize,
    pub start_s: f64,
    pub source_id: String,
}

impl FeatureWindow {
    pub fn new(data: Vec<f64>, frames: usize, start_s: f64, source_id: &str) -> Result<Self> {
        Self::with_dim(data, frames, FEATURE_DIM, start_s, source_id)
    }

    pub fn with_dim(data: Vec<f64>, frames: usize, dim: usize, start_s: f64, source_id: &str) -> Result<Self> {
        if frames == 0 || dim == 0 || data.len() != frames * dim {
            return Err(FeatureError::Shape {
                len: data.len(),
                frames,
                dim,
            });
        }
        Ok(Self {
            data,
            frames,
            dim,
            start_s,
            source_id: source_id.to_string(),
        })
    }

    pub fn columns(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    /// `[1, frames, dim]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.frames, self.dim], self.data.clone()).expect("shape checked at construction")
    }

    /// Stacks equally sized windows into `[batch, frames, dim]`.
    pub fn batch<'a>(windows: impl IntoIterator<Item = &'a FeatureWindow>) -> Result<Tensor> {
        let mut data = Vec::new();
        let mut shape: Option<(usize, usize)> = None;
        let mut count = 0;
        for w in windows {
            match shape {
                None => shape = Some((w.frames, w.dim)),
                Some(s) if s != (w.frames, w.dim) => {
                    return Err(FeatureError::Shape {
                        len: w.data.len(),
                        frames: s.0,
                        dim: s.1,
                    })
                }
                _ => {}
            }
            data.extend_from_slice(&w.data);
            count += 1;
        }
        let (frames, dim) = shape.ok_or(FeatureError::Shape {
            len: 0,
            frames: 0,
            dim: 0,
        })?;
        Ok(Tensor::new(vec![count, frames, dim], data).expect("sizes accumulated per window"))
    }
}

/// Column-wise `(v - min) / (max - min)` over a `rows x cols` matrix;
/// constant columns become 0.
pub fn min_max_normalize(data: &mut [f64], cols: usize) {
    for c in 0..cols {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in data.iter().skip(c).step_by(cols) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        let range = hi - lo;
        for v in data.iter_mut().skip(c).step_by(cols) {
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }
}

/// Precomputed framing, FFT, filterbank and DCT for one configuration.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    spectrum: PowerSpectrum,
    bank: MelFilterbank,
    dct: Dct,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        let frame = config.frame_len();
        if frame == 0 || config.step_len() == 0 {
            return Err(FeatureError::Config("frame length and step must be at least one sample".into()));
        }
        if config.n_mfcc > config.n_filters {
            return Err(FeatureError::Config(format!(
                "{} cepstral coefficients requested from {} filters",
                config.n_mfcc, config.n_filters
            )));
        }
        let spectrum = PowerSpectrum::for_frame(frame);
        let bank = MelFilterbank::new(
            config.n_filters,
            spectrum.n_fft(),
            config.sample_rate_hz as f64,
            config.f_lo,
            config.f_hi,
        )?;
        let dct = Dct::new(config.n_filters, config.n_mfcc);
        Ok(Self {
            config,
            spectrum,
            bank,
            dct,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn log_mel_energies(&self, frame: &[f64]) -> Vec<f64> {
        self.bank.log_energies(&self.spectrum.compute(frame), self.config.energy_floor)
    }

    pub fn mfcc(&self, frame: &[f64]) -> Vec<f64> {
        self.dct.apply(&self.log_mel_energies(frame))
    }

    /// Un-normalized `frames x dim` rows for a window of samples.
    pub fn raw_features(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>> {
        let frames = frame_signal(samples, self.config.frame_len(), self.config.step_len())?;
        let (ceps, logmel): (Vec<_>, Vec<_>) = frames
            .iter()
            .map(|f| {
                let e = self.log_mel_energies(f);
                (self.dct.apply(&e), e)
            })
            .unzip();
        let d1 = deltas(&ceps, self.config.delta_span);
        let d2 = deltas(&d1, self.config.delta_span);
        Ok((0..frames.len())
            .map(|t| [&ceps[t][..], &d1[t][..], &d2[t][..], &logmel[t][..]].concat())
            .collect())
    }

    /// Normalized feature matrix for one window.
    pub fn assemble(&self, window: &Window) -> Result<FeatureWindow> {
        let rows = self.raw_features(&window.samples)?;
        let frames = rows.len();
        let dim = self.config.feature_dim();
        let mut data = rows.concat();
        min_max_normalize(&mut data, dim);
        FeatureWindow::with_dim(data, frames, dim, window.start_s, &window.source_id)
    }

    /// Resamples and high-passes a clip to the configured front-end.
    pub fn prepare(&self, clip: &AudioClip) -> Result<AudioClip> {
        let clip = audio::resample(clip, self.config.sample_rate_hz)?;
        Ok(audio::highpass(&clip, self.config.highpass_hz, self.config.highpass_order)?)
    }

    /// Full pipeline: prepare, window, featurize.
    pub fn featurize_clip(&self, clip: &AudioClip, source_id: &str) -> Result<Vec<FeatureWindow>> {
        let prepared = self.prepare(clip)?;
        audio::extract_windows(&prepared, self.config.win_s, self.config.hop_s, source_id)?
            .iter()
            .map(|w| self.assemble(w))
            .collect()
    }
}

/// Featurizes a window with the default configuration.
pub fn assemble_features(window: &Window) -> Result<FeatureWindow> {
    FeatureExtractor::new(FeatureConfig::default())?.assemble(window)
}
