//! Mini-batch training with binary cross entropy and Adam, plus window-level
//! prediction.
//!
//! Every random choice draws from a named sub-stream of the run seed
//! (`init`, `shuffle`, `augment`), so a run is a pure function of its seed,
//! data and configuration.

mod adam;

pub use adam::{adam_step, AdamState};
pub use crate::eval::threshold;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{window_label, AnnotatedRecording, EventInterval, Task};
use crate::eval::{self, assemble_timeline, extract_events, match_and_score, EvalError, EventMetrics};
use crate::features::{spec_augment, AugmentConfig, FeatureError, FeatureExtractor, FeatureWindow};
use crate::model::{init_params, ModelConfig, ModelError, MultiBranchTCN};
use crate::seed::stream_rng;
use crate::tensor::{Tape, Tensor, TensorError};

/// Windows scored per forward pass outside training.
const INFERENCE_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("label {label} at window {index} of {recording} is not 0 or 1")]
    BadLabel { recording: String, index: usize, label: u8 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss became {loss} at epoch {epoch}, batch {batch} (windows {windows:?})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
        windows: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Masking is applied to training windows only when set.
    pub augment_enabled: bool,
    pub task: Task,
    /// Progress callback period in epochs; 0 silences it.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-5,
            batch_size: 64,
            seed: 0,
            augment: AugmentConfig::default(),
            augment_enabled: true,
            task: Task::Inhalation,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    /// Short schedule for the synthetic corpus: 30 epochs at lr 1e-3.
    pub fn desk_scale() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        self.augment
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))
    }
}

/// One recording prepared for training or validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledRecording {
    pub id: String,
    pub duration_s: f64,
    pub win_s: f64,
    pub hop_s: f64,
    pub windows: Vec<FeatureWindow>,
    pub labels: Vec<u8>,
    /// Ground-truth task events, used for event-level validation.
    pub events: Vec<EventInterval>,
}

impl LabelledRecording {
    pub fn from_recording(rec: &AnnotatedRecording, extractor: &FeatureExtractor, task: Task) -> Result<Self> {
        let windows = extractor.featurize_clip(&rec.clip, &rec.id)?;
        Ok(Self::from_windows(rec, extractor, task, windows))
    }

    /// Attaches labels to windows already featurized from `rec`.
    pub fn from_windows(rec: &AnnotatedRecording, extractor: &FeatureExtractor, task: Task, windows: Vec<FeatureWindow>) -> Self {
        let cfg = extractor.config();
        let labels = windows
            .iter()
            .map(|w| window_label(&rec.events, w.start_s, cfg.win_s, task))
            .collect();
        Self {
            id: rec.id.clone(),
            duration_s: rec.clip.duration_s(),
            win_s: cfg.win_s,
            hop_s: cfg.hop_s,
            windows,
            labels,
            events: rec.task_events(task),
        }
    }

    fn check_labels(&self) -> Result<()> {
        if self.labels.len() != self.windows.len() {
            return Err(TrainError::Shape(format!(
                "{}: {} labels for {} windows",
                self.id,
                self.labels.len(),
                self.windows.len()
            )));
        }
        match self.labels.iter().position(|&l| l > 1) {
            Some(index) => Err(TrainError::BadLabel {
                recording: self.id.clone(),
                index,
                label: self.labels[index],
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept; 0 when no epoch ran.
    pub selected_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_f1\n");
        for e in &self.epochs {
            writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.val_f1).expect("string write");
        }
        out
    }
}

/// Shuffled index batches covering `0..n`; the last batch may be short.
pub fn make_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Validation summary of a model over labelled recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub loss: f64,
    pub metrics: EventMetrics,
}

/// Trains a freshly initialised model. The init sub-stream of `cfg.seed`
/// replaces `model_cfg.init_seed`.
pub fn train(
    model_cfg: &ModelConfig,
    train_set: &[LabelledRecording],
    val_set: &[LabelledRecording],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(MultiBranchTCN, TrainHistory)> {
    let mut init_cfg = model_cfg.clone();
    init_cfg.init_seed = crate::seed::substream(cfg.seed, "init");
    let model = init_params(&init_cfg)?;
    train_from(model, train_set, val_set, cfg, on_epoch)
}

/// Trains `model` in place of a fresh initialisation.
///
/// Keeps the parameters of the epoch with the best validation F1; ties go to
/// the later epoch.
pub fn train_from(
    mut model: MultiBranchTCN,
    train_set: &[LabelledRecording],
    val_set: &[LabelledRecording],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(MultiBranchTCN, TrainHistory)> {
    cfg.validate()?;
    let (windows, labels) = flatten(train_set)?;
    if windows.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val_set.iter().all(|r| r.windows.is_empty()) {
        return Err(TrainError::EmptySplit("validation"));
    }
    for r in val_set {
        r.check_labels()?;
    }

    let mut shuffle_rng = stream_rng(cfg.seed, "shuffle");
    let mut augment_rng = stream_rng(cfg.seed, "augment");
    let mut adam = AdamState::new(model.named_tensors().into_iter().map(|(_, t)| t));
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, MultiBranchTCN)> = None;

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for (bi, batch) in make_batches(windows.len(), cfg.batch_size, &mut shuffle_rng)
            .into_iter()
            .enumerate()
        {
            let inputs: Vec<FeatureWindow> = batch
                .iter()
                .map(|&i| {
                    if cfg.augment_enabled {
                        spec_augment(windows[i], &cfg.augment, &mut augment_rng)
                    } else {
                        windows[i].clone()
                    }
                })
                .collect();
            let targets: Vec<f64> = batch.iter().map(|&i| f64::from(labels[i])).collect();
            let loss = sgd_step(&mut model, &mut adam, &inputs, &targets, cfg.lr).and_then(|l| {
                if l.is_finite() {
                    Ok(l)
                } else {
                    Err(TrainError::NonFinite {
                        epoch,
                        batch: bi,
                        loss: l,
                        windows: batch.clone(),
                    })
                }
            })?;
            loss_sum += loss * batch.len() as f64;
        }
        let val = validate(&model, val_set, cfg.task)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / windows.len() as f64,
            val_loss: val.loss,
            val_f1: val.metrics.f1,
        };
        history.epochs.push(stats);
        if cfg.log_every > 0 && epoch % cfg.log_every == 0 {
            on_epoch(&stats);
        }
        if best.as_ref().map_or(true, |(f1, _)| val.metrics.f1 >= *f1) {
            best = Some((val.metrics.f1, model.clone()));
            history.selected_epoch = epoch;
        }
    }
    Ok((best.map_or(model, |(_, m)| m), history))
}

fn flatten(set: &[LabelledRecording]) -> Result<(Vec<&FeatureWindow>, Vec<u8>)> {
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    for r in set {
        r.check_labels()?;
        windows.extend(r.windows.iter());
        labels.extend(r.labels.iter().copied());
    }
    Ok((windows, labels))
}

/// Forward, mean BCE over the batch, backward and one Adam update. Returns
/// the batch loss; parameters are left untouched when it is not finite.
fn sgd_step(model: &mut MultiBranchTCN, adam: &mut AdamState, inputs: &[FeatureWindow], targets: &[f64], lr: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let x = tape.constant(FeatureWindow::batch(inputs)?);
    let trace = bound.forward(&mut tape, &[x])?;
    let per_window = tape.bce(trace.prob, targets)?;
    let total = tape.sum_all(per_window)?;
    let loss = tape.scale(total, 1.0 / targets.len() as f64)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss)?;
    let grads: Vec<Tensor> = bound
        .params()
        .into_iter()
        .map(|v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect();
    let mut params = model.tensors_mut();
    adam_step(&mut params, &grads, adam, lr)?;
    Ok(value)
}

/// Probabilities and per-window BCE for `windows`, scored in chunks.
fn score_windows(model: &MultiBranchTCN, windows: &[FeatureWindow], targets: Option<&[u8]>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut probs = Vec::with_capacity(windows.len());
    let mut losses = Vec::new();
    for (ci, chunk) in windows.chunks(INFERENCE_CHUNK).enumerate() {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let x = tape.constant(FeatureWindow::batch(chunk)?);
        let trace = bound.forward(&mut tape, &[x])?;
        probs.extend_from_slice(tape.value(trace.prob).data());
        if let Some(t) = targets {
            let ys: Vec<f64> = t[ci * INFERENCE_CHUNK..ci * INFERENCE_CHUNK + chunk.len()]
                .iter()
                .map(|&y| f64::from(y))
                .collect();
            let l = tape.bce(trace.prob, &ys)?;
            losses.extend_from_slice(tape.value(l).data());
        }
    }
    Ok((probs, losses))
}

/// Mean window BCE and micro-averaged event metrics, without augmentation.
pub fn validate(model: &MultiBranchTCN, set: &[LabelledRecording], task: Task) -> Result<Validation> {
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    let mut per = Vec::with_capacity(set.len());
    for r in set {
        let (probs, losses) = score_windows(model, &r.windows, Some(&r.labels))?;
        loss_sum += losses.iter().sum::<f64>();
        count += losses.len();
        let starts: Vec<(f64, f64)> = r.windows.iter().map(|w| w.start_s).zip(probs).collect();
        let predicted = events_from_probs(&starts, r.duration_s, r.win_s, r.hop_s, task)?;
        per.push(match_and_score(&r.events, &predicted)?);
    }
    Ok(Validation {
        loss: if count == 0 { 0.0 } else { loss_sum / count as f64 },
        metrics: EventMetrics::aggregate(&per),
    })
}

/// Events from `(start_s, probability)` pairs on a hop-sized slot grid.
pub fn events_from_probs(window_probs: &[(f64, f64)], duration_s: f64, win_s: f64, hop_s: f64, task: Task) -> Result<Vec<EventInterval>> {
    let timeline = assemble_timeline(window_probs, duration_s, win_s, hop_s)?;
    Ok(extract_events(&timeline, task.label()))
}

/// Per-window probabilities with start times, in window order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub start_s: f64,
    pub prob: f64,
}

/// Featurizes `rec` and scores every window.
pub fn predict_windows(model: &MultiBranchTCN, extractor: &FeatureExtractor, rec: &AnnotatedRecording) -> Result<Vec<WindowPrediction>> {
    let windows = extractor.featurize_clip(&rec.clip, &rec.id)?;
    predict_features(model, &windows)
}

pub fn predict_features(model: &MultiBranchTCN, windows: &[FeatureWindow]) -> Result<Vec<WindowPrediction>> {
    let (probs, _) = score_windows(model, windows, None)?;
    Ok(windows
        .iter()
        .zip(probs)
        .map(|(w, prob)| WindowPrediction { start_s: w.start_s, prob })
        .collect())
}

/// Binary decisions for a sequence of probabilities.
pub fn threshold_all(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| eval::threshold(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{synthesize_recording, Scenario};
    use crate::features::FeatureConfig;
    use crate::model::FusionMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            branches: 2,
            layers_per_branch: 1,
            filters: 4,
            dilation_bases: vec![2, 3],
            classifier_hidden: vec![4, 1],
            fusion: FusionMode::TimeConcat,
            ..ModelConfig::default()
        }
    }

    fn tiny_sets() -> (Vec<LabelledRecording>, Vec<LabelledRecording>) {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let scen = Scenario {
            duration_s: 6.0,
            ..Scenario::default()
        };
        let mk = |s| LabelledRecording::from_recording(&synthesize_recording(s, &scen).unwrap(), &ex, Task::Inhalation).unwrap();
        (vec![mk(1), mk(2)], vec![mk(3)])
    }

    #[test]
    fn batches_keep_the_short_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batches(130, 64, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![64, 64, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..130).collect::<Vec<_>>());
    }

    #[test]
    fn batch_order_follows_the_rng() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let first = make_batches(50, 8, &mut a);
        assert_eq!(first, make_batches(50, 8, &mut b));
        assert_ne!(first, make_batches(50, 8, &mut a));
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(threshold_all(&[0.51, 0.5, 0.49]), vec![1, 0, 0]);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_alone() {
        let (tr, va) = tiny_sets();
        let cfg = TrainConfig {
            epochs: 2,
            lr: 0.0,
            batch_size: 16,
            ..TrainConfig::desk_scale()
        };
        let (model, hist) = train(&tiny_model(), &tr, &va, &cfg, |_| {}).unwrap();
        let mut init_cfg = tiny_model();
        init_cfg.init_seed = crate::seed::substream(cfg.seed, "init");
        assert_eq!(model, init_params(&init_cfg).unwrap());
        assert_eq!(hist.epochs.len(), 2);
    }

    #[test]
    fn identical_runs_match_exactly() {
        let (tr, va) = tiny_sets();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::desk_scale()
        };
        let a = train(&tiny_model(), &tr, &va, &cfg, |_| {}).unwrap();
        let b = train(&tiny_model(), &tr, &va, &cfg, |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.to_csv().lines().count(), 3);
    }

    #[test]
    fn validation_is_repeatable() {
        let (_, va) = tiny_sets();
        let model = init_params(&tiny_model()).unwrap();
        assert_eq!(validate(&model, &va, Task::Inhalation).unwrap(), validate(&model, &va, Task::Inhalation).unwrap());
    }

    #[test]
    fn empty_splits_rejected() {
        let (tr, _) = tiny_sets();
        let err = train(&tiny_model(), &tr, &[], &TrainConfig::desk_scale(), |_| {}).unwrap_err();
        assert!(matches!(err, TrainError::EmptySplit("validation")));
    }

    #[test]
    fn fifteen_seconds_give_29_probabilities() {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let rec = synthesize_recording(
            4,
            &Scenario {
                duration_s: 15.0,
                ..Scenario::default()
            },
        )
        .unwrap();
        let model = init_params(&tiny_model()).unwrap();
        let p = predict_windows(&model, &ex, &rec).unwrap();
        assert_eq!(p.len(), 29);
        assert!(p.iter().all(|w| w.prob > 0.0 && w.prob < 1.0));
        assert_eq!(p, predict_windows(&model, &ex, &rec).unwrap());
    }
}
