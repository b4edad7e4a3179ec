//! Lung sound event detection with a multi-branch dilated temporal
//! convolution network.
//!
//! The crate is organised bottom-up:
//!
//! * [`audio`]: WAV I/O, resampling, zero-phase Butterworth high-pass,
//!   windowing, annotations and a seeded synthetic corpus generator.
//! * [`features`]: 65-dimensional per-frame features (MFCC, deltas,
//!   log mel energies) and time/frequency masking.
//! * [`tensor`]: dense tensors with tape-based reverse-mode autodiff.
//! * [`model`]: the multi-branch residual TCN, fusion and classifier.
//! * [`train`]: Adam, mini-batching, the training loop and window prediction.
//! * [`eval`]: window decisions to events, Jaccard matching and PPv/Se/F1.
//! * [`interpret`]: integrated gradients and layer/neuron conductance.

pub mod audio;
pub mod eval;
pub mod features;
pub mod interpret;
pub mod model;
pub mod seed;
pub mod tensor;
pub mod train;

pub use tensor::{Tape, Tensor, TensorError, Var};
