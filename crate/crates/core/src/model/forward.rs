use super::{FusionMode, ModelError, Result};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct BoundConv {
    pub w: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub dilated: BoundConv,
    pub pointwise: BoundConv,
    pub dilation: usize,
}

#[derive(Debug, Clone)]
pub struct BoundBranch {
    pub in_proj: BoundConv,
    pub layers: Vec<BoundLayer>,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub w: Var,
    pub b: Var,
}

/// A model whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub input_dim: usize,
    pub fusion: FusionMode,
    pub branches: Vec<BoundBranch>,
    pub classifier: Vec<BoundDense>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Per branch, the `[batch, time, k]` input projection.
    pub projections: Vec<Var>,
    /// Per branch and layer, the residual layer output `H_l`.
    pub layers: Vec<Vec<Var>>,
    /// `[batch, F]` fused vector entering the classifier.
    pub pooled: Var,
    /// `[batch]` pre-sigmoid output.
    pub logit: Var,
    /// `[batch]` probability.
    pub prob: Var,
}

impl ForwardTrace {
    pub fn branch_outputs(&self) -> Vec<Var> {
        self.layers.iter().map(|l| *l.last().expect("at least one layer")).collect()
    }
}

/// `H_prev + conv1x1(relu(conv_d(H_prev)))`.
pub fn residual_layer_forward(tape: &mut Tape, h_prev: Var, layer: &BoundLayer) -> Result<Var> {
    let pre = tape.conv1d(h_prev, layer.dilated.w, layer.dilated.b, layer.dilation)?;
    let hidden = tape.relu(pre)?;
    let mixed = tape.conv1d(hidden, layer.pointwise.w, layer.pointwise.b, 1)?;
    Ok(tape.add(h_prev, mixed)?)
}

/// Input projection followed by the residual layers; returns every layer
/// output in order.
pub fn branch_forward(tape: &mut Tape, x: Var, branch: &BoundBranch) -> Result<(Var, Vec<Var>)> {
    let proj = tape.conv1d(x, branch.in_proj.w, branch.in_proj.b, 1)?;
    let mut h = proj;
    let mut outs = Vec::with_capacity(branch.layers.len());
    for layer in &branch.layers {
        h = residual_layer_forward(tape, h, layer)?;
        outs.push(h);
    }
    Ok((proj, outs))
}

/// Joins branch outputs and averages over time.
pub fn fuse(tape: &mut Tape, outputs: &[Var], mode: FusionMode) -> Result<Var> {
    let axis = match mode {
        FusionMode::TimeConcat => 1,
        FusionMode::FeatureConcat => 2,
    };
    let joined = if outputs.len() == 1 {
        outputs[0]
    } else {
        tape.concat(outputs, axis)?
    };
    Ok(tape.mean(joined, 1)?)
}

/// Affine layers with ReLU between them; returns `[batch]` logits and
/// probabilities.
pub fn classify(tape: &mut Tape, pooled: Var, layers: &[BoundDense]) -> Result<(Var, Var)> {
    let mut h = pooled;
    for (i, d) in layers.iter().enumerate() {
        h = tape.affine(h, d.w, d.b)?;
        if i + 1 < layers.len() {
            h = tape.relu(h)?;
        }
    }
    let batch = tape.shape(h)[0];
    if tape.shape(h)[1] != 1 {
        return Err(ModelError::Config("classifier must end in a single output".into()));
    }
    let logit = tape.reshape(h, vec![batch])?;
    let prob = tape.sigmoid(logit)?;
    Ok((logit, prob))
}

impl BoundModel {
    /// Parameter variables in checkpoint order.
    pub fn params(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for br in &self.branches {
            out.extend([br.in_proj.w, br.in_proj.b]);
            for l in &br.layers {
                out.extend([l.dilated.w, l.dilated.b, l.pointwise.w, l.pointwise.b]);
            }
        }
        for d in &self.classifier {
            out.extend([d.w, d.b]);
        }
        out
    }

    /// Runs the network on `[batch, time, input_dim]` input. `inputs` holds
    /// either one variable shared by all branches or one per branch, so
    /// that gradients can be split by branch.
    pub fn forward(&self, tape: &mut Tape, inputs: &[Var]) -> Result<ForwardTrace> {
        if inputs.len() != 1 && inputs.len() != self.branches.len() {
            return Err(ModelError::Config(format!(
                "{} inputs for {} branches",
                inputs.len(),
                self.branches.len()
            )));
        }
        for &x in inputs {
            let s = tape.shape(x);
            if s.len() != 3 || s[2] != self.input_dim {
                return Err(ModelError::InputDim {
                    expected: self.input_dim,
                    got: s.last().copied().unwrap_or(0),
                });
            }
        }
        let mut projections = Vec::new();
        let mut layers = Vec::new();
        for (b, branch) in self.branches.iter().enumerate() {
            let x = inputs[if inputs.len() == 1 { 0 } else { b }];
            let (proj, outs) = branch_forward(tape, x, branch)?;
            projections.push(proj);
            layers.push(outs);
        }
        let outputs: Vec<Var> = layers.iter().map(|l| *l.last().expect("layers >= 1")).collect();
        let pooled = fuse(tape, &outputs, self.fusion)?;
        let (logit, prob) = classify(tape, pooled, &self.classifier)?;
        Ok(ForwardTrace {
            projections,
            layers,
            pooled,
            logit,
            prob,
        })
    }
}
