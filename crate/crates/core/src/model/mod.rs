//! Multi-branch dilated residual TCN.
//!
//! Every branch projects the 65 input features to `k` channels with a
//! pointwise convolution and then applies `L` residual layers
//! `H' = H + conv1x1(relu(conv_d(H)))` with dilation `base^l`. Branch outputs
//! are fused (time-axis concatenation then a mean over time by default) and
//! classified by a small perceptron ending in a sigmoid.

mod checkpoint;
mod forward;

pub use checkpoint::{load, load_with_metadata, save, save_with_metadata, FORMAT_VERSION, MAGIC};
pub use forward::{
    branch_forward, classify, fuse, residual_layer_forward, BoundBranch, BoundConv, BoundDense, BoundLayer, BoundModel,
    ForwardTrace,
};

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FEATURE_DIM;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input has {got} features per frame, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checkpoint tensor {name}: declared shape {found:?}, configuration requires {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// How branch outputs are combined before the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Concatenate on the time axis, then average over time: `[batch, k]`.
    #[default]
    TimeConcat,
    /// Concatenate on the channel axis, then average over time: `[batch, B k]`.
    FeatureConcat,
}

impl std::str::FromStr for FusionMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time_concat" => Ok(Self::TimeConcat),
            "feature_concat" => Ok(Self::FeatureConcat),
            other => Err(ModelError::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::TimeConcat => "time_concat",
            Self::FeatureConcat => "feature_concat",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub branches: usize,
    pub layers_per_branch: usize,
    pub filters: usize,
    pub kernel: usize,
    pub dilation_bases: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub fusion: FusionMode,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: FEATURE_DIM,
            branches: 3,
            layers_per_branch: 3,
            filters: 80,
            kernel: 3,
            dilation_bases: vec![2, 3, 4],
            classifier_hidden: vec![80, 32, 1],
            fusion: FusionMode::TimeConcat,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.branches == 0 || self.branches != self.dilation_bases.len() {
            return bad(format!(
                "{} branches need exactly that many dilation bases, got {:?}",
                self.branches, self.dilation_bases
            ));
        }
        if self.dilation_bases.contains(&0) {
            return bad("dilation bases must be at least 1".into());
        }
        if self.layers_per_branch == 0 || self.filters == 0 || self.input_dim == 0 {
            return bad("layers, filters and input width must be at least 1".into());
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel size {} must be odd", self.kernel));
        }
        if self.classifier_hidden.last() != Some(&1) || self.classifier_hidden.contains(&0) {
            return bad(format!(
                "classifier widths {:?} must be positive and end in 1",
                self.classifier_hidden
            ));
        }
        Ok(())
    }

    /// Width of the pooled vector that enters the classifier.
    pub fn pooled_dim(&self) -> usize {
        match self.fusion {
            FusionMode::TimeConcat => self.filters,
            FusionMode::FeatureConcat => self.branches * self.filters,
        }
    }

    /// Frames on either side of `t` that can influence a branch output at
    /// `t`: `sum_l base^l (kernel - 1) / 2`.
    pub fn receptive_radius(&self, branch: usize) -> usize {
        dilation_schedule(self.dilation_bases[branch], self.layers_per_branch)
            .iter()
            .map(|d| d * (self.kernel - 1) / 2)
            .sum()
    }
}

/// `[base^0, base^1, ..., base^(layers-1)]`.
pub fn dilation_schedule(base: usize, layers: usize) -> Vec<usize> {
    (0..layers as u32).map(|l| base.pow(l)).collect()
}

/// A convolution's `[kernel, c_in, c_out]` weight and `[c_out]` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLayer {
    pub dilated: Conv,
    pub pointwise: Conv,
    pub dilation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchEncoder {
    pub base: usize,
    pub in_proj: Conv,
    pub layers: Vec<ResidualLayer>,
}

/// An affine layer's `[fin, fout]` weight and `[fout]` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiBranchTCN {
    pub config: ModelConfig,
    pub branches: Vec<BranchEncoder>,
    pub classifier: Vec<Dense>,
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("product of shape")
}

fn conv(kernel: usize, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Conv {
    Conv {
        weight: glorot(&[kernel, c_in, c_out], kernel * c_in, kernel * c_out, rng),
        bias: Tensor::zeros(&[c_out]),
    }
}

/// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`, biases zero, drawn
/// in parameter order from a generator seeded with `config.init_seed`.
pub fn init_params(config: &ModelConfig) -> Result<MultiBranchTCN> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let k = config.filters;
    let branches = config
        .dilation_bases
        .iter()
        .map(|&base| BranchEncoder {
            base,
            in_proj: conv(1, config.input_dim, k, &mut rng),
            layers: dilation_schedule(base, config.layers_per_branch)
                .into_iter()
                .map(|dilation| ResidualLayer {
                    dilated: conv(config.kernel, k, k, &mut rng),
                    pointwise: conv(1, k, k, &mut rng),
                    dilation,
                })
                .collect(),
        })
        .collect();
    let mut fin = config.pooled_dim();
    let classifier = config
        .classifier_hidden
        .iter()
        .map(|&fout| {
            let d = Dense {
                weight: glorot(&[fin, fout], fin, fout, &mut rng),
                bias: Tensor::zeros(&[fout]),
            };
            fin = fout;
            d
        })
        .collect();
    Ok(MultiBranchTCN {
        config: config.clone(),
        branches,
        classifier,
    })
}

impl MultiBranchTCN {
    /// Parameters with stable names, in a fixed order shared by
    /// [`Self::tensors_mut`] and the checkpoint format.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (b, br) in self.branches.iter().enumerate() {
            out.push((format!("branch{b}.in_proj.weight"), &br.in_proj.weight));
            out.push((format!("branch{b}.in_proj.bias"), &br.in_proj.bias));
            for (l, layer) in br.layers.iter().enumerate() {
                out.push((format!("branch{b}.layer{l}.dilated.weight"), &layer.dilated.weight));
                out.push((format!("branch{b}.layer{l}.dilated.bias"), &layer.dilated.bias));
                out.push((format!("branch{b}.layer{l}.pointwise.weight"), &layer.pointwise.weight));
                out.push((format!("branch{b}.layer{l}.pointwise.bias"), &layer.pointwise.bias));
            }
        }
        for (i, d) in self.classifier.iter().enumerate() {
            out.push((format!("classifier{i}.weight"), &d.weight));
            out.push((format!("classifier{i}.bias"), &d.bias));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for br in &mut self.branches {
            out.push(&mut br.in_proj.weight);
            out.push(&mut br.in_proj.bias);
            for layer in &mut br.layers {
                out.push(&mut layer.dilated.weight);
                out.push(&mut layer.dilated.bias);
                out.push(&mut layer.pointwise.weight);
                out.push(&mut layer.pointwise.bias);
            }
        }
        for d in &mut self.classifier {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundModel {
        let vars: Vec<Var> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone(), requires_grad))
            .collect();
        self.bind_vars(&vars)
    }

    /// Arranges existing variables, given in [`Self::named_tensors`] order,
    /// into this model's structure.
    pub fn bind_vars(&self, vars: &[Var]) -> BoundModel {
        assert_eq!(vars.len(), self.named_tensors().len(), "one variable per parameter");
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let conv = |next: &mut dyn FnMut() -> Var| BoundConv { w: next(), b: next() };
        let branches = self
            .branches
            .iter()
            .map(|br| BoundBranch {
                in_proj: conv(&mut next),
                layers: br
                    .layers
                    .iter()
                    .map(|l| BoundLayer {
                        dilated: conv(&mut next),
                        pointwise: conv(&mut next),
                        dilation: l.dilation,
                    })
                    .collect(),
            })
            .collect();
        let classifier = self
            .classifier
            .iter()
            .map(|_| BoundDense { w: next(), b: next() })
            .collect();
        BoundModel {
            input_dim: self.config.input_dim,
            fusion: self.config.fusion,
            branches,
            classifier,
        }
    }

    fn run(&self, x: &Tensor) -> Result<(Tape, ForwardTrace)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let input = tape.constant(x.clone());
        let trace = bound.forward(&mut tape, &[input])?;
        Ok((tape, trace))
    }

    /// Pre-sigmoid outputs for a `[batch, time, input_dim]` batch.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (tape, trace) = self.run(x)?;
        Ok(tape.value(trace.logit).data().to_vec())
    }

    /// Probabilities for a `[batch, time, input_dim]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (tape, trace) = self.run(x)?;
        Ok(tape.value(trace.prob).data().to_vec())
    }
}
