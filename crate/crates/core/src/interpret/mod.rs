//! Input attribution by integrated gradients, plus layer and neuron
//! conductance.
//!
//! The attributed output is the pre-sigmoid logit. The baseline defaults to
//! the all-zero feature matrix, the minimum after normalisation. Path
//! integrals use the midpoint rule: point `m` of `steps` sits at
//! `x' + (m - 0.5) / steps * (x - x')`.
//!
//! Every layer of a branch is a complete cut between that branch's input and
//! the fused output, so the conductance of layer `l` in branch `b`, summed
//! over its units, is the branch-`b` share of the integrated gradients and
//! does not depend on `l`. The unit-level form in [`unit_conductance`]
//! integrates `dF/dy * dy` along the path instead, which is the quantity the
//! chain decomposition approximates.

mod report;

pub use report::{interpretation_report, top_fraction, InterpretationReport, SalientCell};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureWindow};
use crate::model::{ModelError, MultiBranchTCN};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Path points evaluated per forward/backward pass.
const PATH_CHUNK: usize = 16;

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("steps must be at least 1")]
    ZeroSteps,
    #[error("branch {branch}, layer {layer} outside a model with {branches} branches of {layers} layers")]
    BadLayer {
        branch: usize,
        layer: usize,
        branches: usize,
        layers: usize,
    },
    #[error("frame {frame} outside a window of {frames} frames")]
    BadFrame { frame: usize, frames: usize },
    #[error("window {index} outside a recording of {count} windows")]
    BadWindow { index: usize, count: usize },
    #[error("baseline is {baseline:?} but input is {input:?}")]
    BaselineShape { baseline: Vec<usize>, input: Vec<usize> },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("fraction {0} must lie in (0, 1]")]
    BadFraction(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

pub type Result<T> = std::result::Result<T, InterpretError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    InputAttribution,
    LayerConductance,
    NeuronConductance,
}

impl AttributionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AttributionMethod::InputAttribution => "input_attribution",
            AttributionMethod::LayerConductance => "layer_conductance",
            AttributionMethod::NeuronConductance => "neuron_conductance",
        }
    }
}

/// Input-shaped attribution matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub frames: usize,
    pub dim: usize,
    /// Row-major `frames x dim`.
    pub values: Vec<f64>,
    /// Logit at the attributed input.
    pub target: f64,
    /// Logit at the baseline.
    pub baseline_target: f64,
    pub method: AttributionMethod,
    pub branch: Option<usize>,
    pub layer: Option<usize>,
    pub frame: Option<usize>,
}

impl AttributionMap {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn get(&self, frame: usize, col: usize) -> f64 {
        self.values[frame * self.dim + col]
    }

    /// `frames` rows of `dim` comma-separated values under a `c0..` header.
    pub fn to_csv(&self) -> String {
        matrix_csv(&self.values, self.dim)
    }
}

pub(crate) fn matrix_csv(values: &[f64], dim: usize) -> String {
    let mut out: String = (0..dim).map(|c| format!("c{c}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in values.chunks(dim) {
        out.push_str(&row.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Gradients of a per-sample scalar `f` at the midpoint path points, summed
/// over the path. `f` maps `inputs` copies of a `[n, frames, dim]` batch to
/// `[n]` outputs; one summed gradient is returned per copy.
pub fn path_gradient_sums<F>(f: F, inputs: usize, x: &Tensor, baseline: &Tensor, steps: usize) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, InterpretError>,
{
    check_path(x, baseline, steps)?;
    let numel = x.numel();
    let mut sums = vec![vec![0.0; numel]; inputs];
    let alphas: Vec<f64> = (1..=steps).map(|m| (m as f64 - 0.5) / steps as f64).collect();
    for chunk in alphas.chunks(PATH_CHUNK) {
        let batch = path_batch(x, baseline, chunk)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = (0..inputs).map(|_| tape.leaf(batch.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        let total = tape.sum_all(out)?;
        tape.backward(total)?;
        for (sum, &v) in sums.iter_mut().zip(&vars) {
            if let Some(g) = tape.grad(v) {
                for row in g.data().chunks(numel) {
                    sum.iter_mut().zip(row).for_each(|(s, r)| *s += r);
                }
            }
        }
    }
    Ok(sums)
}

fn check_path(x: &Tensor, baseline: &Tensor, steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(InterpretError::ZeroSteps);
    }
    if x.shape() != baseline.shape() {
        return Err(InterpretError::BaselineShape {
            baseline: baseline.shape().to_vec(),
            input: x.shape().to_vec(),
        });
    }
    if !x.is_finite() || !baseline.is_finite() {
        return Err(InterpretError::NonFinite);
    }
    Ok(())
}

/// `[alphas.len(), ...]` stack of `baseline + a * (x - baseline)`.
fn path_batch(x: &Tensor, baseline: &Tensor, alphas: &[f64]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(alphas.len() * x.numel());
    for &a in alphas {
        data.extend(x.data().iter().zip(baseline.data()).map(|(&xi, &bi)| bi + a * (xi - bi)));
    }
    let mut shape = vec![alphas.len()];
    shape.extend_from_slice(x.shape());
    Ok(Tensor::new(shape, data)?)
}

fn scaled_difference(sum: &[f64], x: &Tensor, baseline: &Tensor, steps: usize) -> Vec<f64> {
    sum.iter()
        .zip(x.data().iter().zip(baseline.data()))
        .map(|(g, (xi, bi))| (xi - bi) * g / steps as f64)
        .collect()
}

fn zero_baseline(x: &FeatureWindow) -> FeatureWindow {
    FeatureWindow {
        data: vec![0.0; x.data.len()],
        ..x.clone()
    }
}

fn window_matrix(w: &FeatureWindow) -> Result<Tensor> {
    Ok(Tensor::new(vec![w.frames, w.dim], w.data.clone())?)
}

fn logit_of(model: &MultiBranchTCN, w: &FeatureWindow) -> Result<f64> {
    Ok(model.logits(&w.to_tensor())?[0])
}

/// Logits of `model` with one input copy per branch.
fn branch_logits(model: &MultiBranchTCN, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let bound = model.bind(tape, false);
    Ok(bound.forward(tape, vars)?.logit)
}

/// Integrated gradients of the logit, split by branch: entry `b` is the
/// attribution flowing through branch `b`, and the entries sum to the
/// plain integrated gradients.
pub fn branch_attributions(
    model: &MultiBranchTCN,
    x: &FeatureWindow,
    baseline: Option<&FeatureWindow>,
    steps: usize,
) -> Result<Vec<AttributionMap>> {
    let zero;
    let base = match baseline {
        Some(b) => b,
        None => {
            zero = zero_baseline(x);
            &zero
        }
    };
    let (xm, bm) = (window_matrix(x)?, window_matrix(base)?);
    let sums = path_gradient_sums(
        |tape, vars| branch_logits(model, tape, vars),
        model.branches.len(),
        &xm,
        &bm,
        steps,
    )?;
    let (target, baseline_target) = (logit_of(model, x)?, logit_of(model, base)?);
    Ok(sums
        .iter()
        .enumerate()
        .map(|(b, s)| AttributionMap {
            frames: x.frames,
            dim: x.dim,
            values: scaled_difference(s, &xm, &bm, steps),
            target,
            baseline_target,
            method: AttributionMethod::LayerConductance,
            branch: Some(b),
            layer: None,
            frame: None,
        })
        .collect())
}

/// Integrated gradients of the logit with respect to the input features.
pub fn integrated_gradients(
    model: &MultiBranchTCN,
    x: &FeatureWindow,
    baseline: Option<&FeatureWindow>,
    steps: usize,
) -> Result<AttributionMap> {
    let parts = branch_attributions(model, x, baseline, steps)?;
    Ok(sum_maps(&parts))
}

fn sum_maps(parts: &[AttributionMap]) -> AttributionMap {
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        out.values.iter_mut().zip(&p.values).for_each(|(a, b)| *a += b);
    }
    out.method = AttributionMethod::InputAttribution;
    out.branch = None;
    out
}

fn check_layer(model: &MultiBranchTCN, branch: usize, layer: usize) -> Result<()> {
    let layers = model.config.layers_per_branch;
    if branch >= model.branches.len() || layer >= layers {
        return Err(InterpretError::BadLayer {
            branch,
            layer,
            branches: model.branches.len(),
            layers,
        });
    }
    Ok(())
}

/// Conductance through layer `layer` of branch `branch`, aggregated over the
/// layer's units and projected onto the input coordinates.
pub fn layer_conductance(
    model: &MultiBranchTCN,
    x: &FeatureWindow,
    branch: usize,
    layer: usize,
    steps: usize,
) -> Result<AttributionMap> {
    check_layer(model, branch, layer)?;
    let mut map = branch_attributions(model, x, None, steps)?.swap_remove(branch);
    map.layer = Some(layer);
    Ok(map)
}

/// Per-unit conductance of one layer depth across all branches.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitConductance {
    pub layer: usize,
    /// Per branch, `frames x filters` row-major totals.
    pub per_branch: Vec<Vec<f64>>,
    pub target: f64,
    pub baseline_target: f64,
}

impl UnitConductance {
    /// Sum over every unit of the layer; approximates
    /// `target - baseline_target`.
    pub fn total(&self) -> f64 {
        self.per_branch.iter().flatten().sum()
    }
}

/// `sum_m dF/dy_j(midpoint m) * (y_j(end of step m) - y_j(start of step m))`
/// for every unit `y_j` at depth `layer` of every branch.
pub fn unit_conductance(
    model: &MultiBranchTCN,
    x: &FeatureWindow,
    baseline: Option<&FeatureWindow>,
    layer: usize,
    steps: usize,
) -> Result<UnitConductance> {
    check_layer(model, 0, layer)?;
    let zero;
    let base = match baseline {
        Some(b) => b,
        None => {
            zero = zero_baseline(x);
            &zero
        }
    };
    let (xm, bm) = (window_matrix(x)?, window_matrix(base)?);
    check_path(&xm, &bm, steps)?;
    let n_branches = model.branches.len();

    let mids: Vec<f64> = (1..=steps).map(|m| (m as f64 - 0.5) / steps as f64).collect();
    let ends: Vec<f64> = (0..=steps).map(|m| m as f64 / steps as f64).collect();

    let mut grads: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(steps); n_branches];
    for chunk in mids.chunks(PATH_CHUNK) {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let input = tape.leaf(path_batch(&xm, &bm, chunk)?, true);
        let trace = bound.forward(&mut tape, &[input])?;
        let total = tape.sum_all(trace.logit)?;
        tape.backward(total)?;
        for (b, g_b) in grads.iter_mut().enumerate() {
            let y = trace.layers[b][layer];
            let g = tape.grad(y).unwrap_or_else(|| Tensor::zeros(tape.shape(y)));
            let unit = g.numel() / chunk.len();
            g_b.extend(g.data().chunks(unit).map(<[f64]>::to_vec));
        }
    }

    let mut activations: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(steps + 1); n_branches];
    for chunk in ends.chunks(PATH_CHUNK) {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let input = tape.constant(path_batch(&xm, &bm, chunk)?);
        let trace = bound.forward(&mut tape, &[input])?;
        for (b, a_b) in activations.iter_mut().enumerate() {
            let y = tape.value(trace.layers[b][layer]);
            let unit = y.numel() / chunk.len();
            a_b.extend(y.data().chunks(unit).map(<[f64]>::to_vec));
        }
    }

    let per_branch = (0..n_branches)
        .map(|b| {
            let mut acc = vec![0.0; grads[b][0].len()];
            for m in 0..steps {
                let (lo, hi) = (&activations[b][m], &activations[b][m + 1]);
                for (j, a) in acc.iter_mut().enumerate() {
                    *a += grads[b][m][j] * (hi[j] - lo[j]);
                }
            }
            acc
        })
        .collect();
    Ok(UnitConductance {
        layer,
        per_branch,
        target: logit_of(model, x)?,
        baseline_target: logit_of(model, base)?,
    })
}

/// Conductance of every input coordinate through the units at one frame of
/// one layer: `(x_i - x'_i) / steps * sum_m sum_c dF/dy_{t,c} * dy_{t,c}/dx_i`.
pub fn neuron_conductance(
    model: &MultiBranchTCN,
    x: &FeatureWindow,
    branch: usize,
    layer: usize,
    frame: usize,
    steps: usize,
) -> Result<AttributionMap> {
    check_layer(model, branch, layer)?;
    if frame >= x.frames {
        return Err(InterpretError::BadFrame {
            frame,
            frames: x.frames,
        });
    }
    let base = zero_baseline(x);
    let (xm, bm) = (window_matrix(x)?, window_matrix(&base)?);
    check_path(&xm, &bm, steps)?;
    let numel = xm.numel();
    let mut sum = vec![0.0; numel];
    let mids: Vec<f64> = (1..=steps).map(|m| (m as f64 - 0.5) / steps as f64).collect();
    for chunk in mids.chunks(PATH_CHUNK) {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let input = tape.leaf(path_batch(&xm, &bm, chunk)?, true);
        let trace = bound.forward(&mut tape, &[input])?;
        let total = tape.sum_all(trace.logit)?;
        tape.backward(total)?;
        let y = trace.layers[branch][layer];
        let mut seed = tape.grad(y).unwrap_or_else(|| Tensor::zeros(tape.shape(y)));
        let (t_len, width) = (tape.shape(y)[1], tape.shape(y)[2]);
        for (idx, v) in seed.data_mut().iter_mut().enumerate() {
            if (idx / width) % t_len != frame {
                *v = 0.0;
            }
        }
        tape.reset_grads();
        tape.backward_with_seed(y, seed)?;
        if let Some(g) = tape.grad(input) {
            for row in g.data().chunks(numel) {
                sum.iter_mut().zip(row).for_each(|(s, r)| *s += r);
            }
        }
    }
    Ok(AttributionMap {
        frames: x.frames,
        dim: x.dim,
        values: scaled_difference(&sum, &xm, &bm, steps),
        target: logit_of(model, x)?,
        baseline_target: logit_of(model, &base)?,
        method: AttributionMethod::NeuronConductance,
        branch: Some(branch),
        layer: Some(layer),
        frame: Some(frame),
    })
}
