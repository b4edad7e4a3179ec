use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{self, ConvDims, BCE_EPS};
use super::{Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        dims: ConvDims,
    },
    Affine {
        x: usize,
        w: usize,
        b: usize,
        rows: usize,
        fin: usize,
        fout: usize,
    },
    Relu(usize),
    Sigmoid(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Mean {
        x: usize,
        axis: usize,
    },
    SumAll(usize),
    Reshape(usize),
    Bce {
        p: usize,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation and replays it backwards.
///
/// Nodes are appended in evaluation order, so reverse index order is a valid
/// reverse topological order and `backward` visits every node once.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a constant that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v).expect("variable from another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of the last backward pass with respect to `v`, if `v` takes
    /// part in the differentiated graph.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.check(v).ok()?;
        let g = self.grads.get(v.index)?.as_ref()?;
        Some(Tensor::new(self.nodes[v.index].value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn needs_grad(&self, indices: &[usize]) -> bool {
        indices.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn val(&self, index: usize) -> &Tensor {
        &self.nodes[index].value
    }

    /// Dilated 1-D convolution with symmetric zero ("same") padding.
    ///
    /// `x: [batch, time, c_in]`, `w: [kernel, c_in, c_out]`, `b: [c_out]`.
    /// Output frame `t` reads inputs `t + (j - (kernel-1)/2) * dilation`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        for v in [x, w, b] {
            self.check(v)?;
        }
        if dilation == 0 {
            return Err(TensorError::ZeroDilation);
        }
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 1 {
            return Err(TensorError::Shape {
                op: "conv1d",
                detail: format!("x {xs:?}, w {ws:?}, b {bs:?}"),
            });
        }
        if ws[0] % 2 == 0 {
            return Err(TensorError::EvenKernel(ws[0]));
        }
        if xs[2] != ws[1] || ws[2] != bs[0] {
            return Err(TensorError::Shape {
                op: "conv1d",
                detail: format!("x {xs:?}, w {ws:?}, b {bs:?}"),
            });
        }
        let dims = ConvDims {
            batch: xs[0],
            time: xs[1],
            c_in: xs[2],
            c_out: ws[2],
            kernel: ws[0],
            dilation,
        };
        let y = ops::conv1d_forward(
            self.val(x.index).data(),
            self.val(w.index).data(),
            self.val(b.index).data(),
            dims,
        );
        let value = Tensor::new(vec![dims.batch, dims.time, dims.c_out], y)?;
        let rg = self.needs_grad(&[x.index, w.index, b.index]);
        Ok(self.push(
            value,
            Op::Conv1d {
                x: x.index,
                w: w.index,
                b: b.index,
                dims,
            },
            rg,
        ))
    }

    /// `x · w + b` for `x: [rows, fin]`, `w: [fin, fout]`, `b: [fout]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        for v in [x, w, b] {
            self.check(v)?;
        }
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(TensorError::Shape {
                op: "affine",
                detail: format!("x {xs:?}, w {ws:?}, b {bs:?}"),
            });
        }
        let (rows, fin, fout) = (xs[0], xs[1], ws[1]);
        let y = ops::affine_forward(
            self.val(x.index).data(),
            self.val(w.index).data(),
            self.val(b.index).data(),
            rows,
            fin,
            fout,
        );
        let value = Tensor::new(vec![rows, fout], y)?;
        let rg = self.needs_grad(&[x.index, w.index, b.index]);
        Ok(self.push(
            value,
            Op::Affine {
                x: x.index,
                w: w.index,
                b: b.index,
                rows,
                fin,
                fout,
            },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        self.check(x)?;
        let src = self.val(x.index);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.nodes[x.index].requires_grad;
        Ok(self.push(value, op, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(0.0), Op::Relu(x.index))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::sigmoid, Op::Sigmoid(x.index))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary(x, |v| v * factor, Op::Scale(x.index, factor))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.val(a.index), self.val(b.index));
        if ta.shape() != tb.shape() {
            return Err(TensorError::Shape {
                op: name,
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[a.index, b.index]);
        Ok(self.push(value, op, rg))
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.index, b.index))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.index, b.index))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or(TensorError::EmptyConcat)?;
        for &v in inputs {
            self.check(v)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Axis {
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    detail: format!("{:?} vs {:?} on axis {axis}", s, base),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = ops::split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.val(v.index);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(shape, data)?;
        let idx: Vec<usize> = inputs.iter().map(|v| v.index).collect();
        let rg = self.needs_grad(&idx);
        Ok(self.push(value, Op::Concat { inputs: idx, axis }, rg))
    }

    /// Mean over one axis, removing it from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                axis,
                rank: shape.len(),
            });
        }
        let data = ops::mean_axis_forward(self.val(x.index).data(), &shape, axis);
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, data)?;
        let rg = self.nodes[x.index].requires_grad;
        Ok(self.push(value, Op::Mean { x: x.index, axis }, rg))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.val(x.index).data().iter().sum();
        let rg = self.nodes[x.index].requires_grad;
        Ok(self.push(Tensor::scalar(s), Op::SumAll(x.index), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.check(x)?;
        let value = self.val(x.index).clone().reshape(shape)?;
        let rg = self.nodes[x.index].requires_grad;
        Ok(self.push(value, Op::Reshape(x.index), rg))
    }

    /// Elementwise binary cross entropy `-[y ln p + (1-y) ln(1-p)]` with `p`
    /// clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        self.check(p)?;
        let tp = self.val(p.index);
        if tp.numel() != targets.len() {
            return Err(TensorError::Shape {
                op: "bce",
                detail: format!("{} predictions vs {} targets", tp.numel(), targets.len()),
            });
        }
        let data = tp.data().iter().zip(targets).map(|(&p, &y)| ops::bce(p, y)).collect();
        let value = Tensor::new(tp.shape().to_vec(), data)?;
        let rg = self.nodes[p.index].requires_grad;
        Ok(self.push(
            value,
            Op::Bce {
                p: p.index,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Which side of every non-smooth point each recorded op sits on: one
    /// flag per ReLU input element (`> 0`) and per clamped BCE input.
    /// Two evaluations with equal patterns lie in the same smooth piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => out.extend(self.val(*x).data().iter().map(|&v| v > 0.0)),
                Op::Bce { p, .. } => out.extend(
                    self.val(*p)
                        .data()
                        .iter()
                        .map(|&v| (BCE_EPS..=1.0 - BCE_EPS).contains(&v)),
                ),
                _ => {}
            }
        }
        out
    }

    /// Backpropagates from a scalar loss, filling gradients for every node
    /// that depends on a `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        let shape = self.shape(loss).to_vec();
        if self.val(loss.index).numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.backward_with_seed(loss, Tensor::full(&shape, 1.0))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`)
    /// back through the graph.
    pub fn backward_with_seed(&mut self, output: Var, seed: Tensor) -> Result<()> {
        self.check(output)?;
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if seed.shape() != self.shape(output) {
            return Err(TensorError::Shape {
                op: "backward",
                detail: format!("seed {:?} vs output {:?}", seed.shape(), self.shape(output)),
            });
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[output.index] = Some(seed.into_data());
        for i in (0..=output.index).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, index: usize, delta: Vec<f64>) {
        if !self.nodes[index].requires_grad {
            return;
        }
        match &mut self.grads[index] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, dims } => {
                if self.nodes[x].requires_grad {
                    let dx = ops::conv1d_backward_input(g, self.val(w).data(), dims);
                    self.accumulate(x, dx);
                }
                if self.nodes[w].requires_grad {
                    let dw = ops::conv1d_backward_weight(self.val(x).data(), g, dims);
                    self.accumulate(w, dw);
                }
                if self.nodes[b].requires_grad {
                    self.accumulate(b, ops::column_sums(g, dims.c_out));
                }
            }
            Op::Affine {
                x,
                w,
                b,
                rows,
                fin,
                fout,
            } => {
                if self.nodes[x].requires_grad {
                    let dx = ops::affine_backward_input(g, self.val(w).data(), rows, fin, fout);
                    self.accumulate(x, dx);
                }
                if self.nodes[w].requires_grad {
                    let dw = ops::affine_backward_weight(self.val(x).data(), g, rows, fin, fout);
                    self.accumulate(w, dw);
                }
                if self.nodes[b].requires_grad {
                    self.accumulate(b, ops::column_sums(g, fout));
                }
            }
            Op::Relu(x) => {
                // derivative at exactly 0 is taken as 0
                let dx = self
                    .val(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                self.accumulate(x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = self
                    .val(i)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gi)| gi * s * (1.0 - s))
                    .collect();
                self.accumulate(x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            Op::Mul(a, b) => {
                if self.nodes[a].requires_grad {
                    let da = self.val(b).data().iter().zip(g).map(|(v, gi)| v * gi).collect();
                    self.accumulate(a, da);
                }
                if self.nodes[b].requires_grad {
                    let db = self.val(a).data().iter().zip(g).map(|(v, gi)| v * gi).collect();
                    self.accumulate(b, db);
                }
            }
            Op::Scale(x, factor) => {
                self.accumulate(x, g.iter().map(|gi| gi * factor).collect());
            }
            Op::Concat { inputs, axis } => {
                let shape = self.val(i).shape().to_vec();
                let (outer, _, inner) = ops::split_axis(&shape, axis);
                let mut cursor = 0;
                let row = shape[axis] * inner;
                for &src in &inputs {
                    let chunk = self.val(src).shape()[axis] * inner;
                    if self.nodes[src].requires_grad {
                        let mut d = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            d.extend_from_slice(&g[o * row + cursor..o * row + cursor + chunk]);
                        }
                        self.accumulate(src, d);
                    }
                    cursor += chunk;
                }
            }
            Op::Mean { x, axis } => {
                let shape = self.val(x).shape().to_vec();
                self.accumulate(x, ops::mean_axis_backward(g, &shape, axis));
            }
            Op::SumAll(x) => {
                let n = self.val(x).numel();
                self.accumulate(x, vec![g[0]; n]);
            }
            Op::Reshape(x) => self.accumulate(x, g.to_vec()),
            Op::Bce { p, targets } => {
                let dp = self
                    .val(p)
                    .data()
                    .iter()
                    .zip(&targets)
                    .zip(g)
                    .map(|((&pv, &y), &gi)| gi * ops::bce_grad(pv, y))
                    .collect();
                self.accumulate(p, dp);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(x: &[f64]) -> Tensor {
        Tensor::new(vec![1, x.len(), 1], x.to_vec()).unwrap()
    }

    fn kernel(w: &[f64]) -> Tensor {
        Tensor::new(vec![w.len(), 1, 1], w.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_hand_examples() {
        let mut t = Tape::new();
        let x = t.constant(seq(&[1.0, 2.0, 3.0, 4.0]));
        let w = t.constant(kernel(&[1.0, 0.0, -1.0]));
        let b = t.constant(Tensor::zeros(&[1]));
        let y1 = t.conv1d(x, w, b, 1).unwrap();
        assert_eq!(t.value(y1).data(), &[-2.0, -2.0, -2.0, 3.0]);
        let y2 = t.conv1d(x, w, b, 2).unwrap();
        assert_eq!(t.value(y2).data(), &[-3.0, -4.0, 1.0, 2.0]);
    }

    #[test]
    fn conv1d_identity_kernel_for_any_dilation() {
        let mut t = Tape::new();
        let xs = [0.3, -1.2, 4.0, 2.5, -0.7, 9.0];
        let x = t.constant(seq(&xs));
        let w = t.constant(kernel(&[0.0, 1.0, 0.0]));
        let b = t.constant(Tensor::zeros(&[1]));
        for d in 1..8 {
            let y = t.conv1d(x, w, b, d).unwrap();
            assert_eq!(t.value(y).data(), &xs);
        }
    }

    #[test]
    fn conv1d_rejects_even_kernel_and_mismatch() {
        let mut t = Tape::new();
        let x = t.constant(seq(&[1.0, 2.0]));
        let w = t.constant(kernel(&[1.0, 1.0]));
        let b = t.constant(Tensor::zeros(&[1]));
        assert_eq!(t.conv1d(x, w, b, 1), Err(TensorError::EvenKernel(2)));
        let w3 = t.constant(Tensor::zeros(&[3, 2, 1]));
        assert!(matches!(t.conv1d(x, w3, b, 1), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn sigmoid_and_bce_anchors() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::from_vec(vec![0.0]));
        let s = t.sigmoid(z).unwrap();
        assert_eq!(t.value(s).data(), &[0.5]);
        let l = t.bce(s, &[1.0]).unwrap();
        assert!((t.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn mean_of_concat_is_mean_of_means() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = t.constant(Tensor::new(vec![1, 3, 2], vec![-1.0, 0.5, 2.0, 8.0, 0.0, 1.0]).unwrap());
        let c = t.concat(&[a, b], 1).unwrap();
        let m = t.mean(c, 1).unwrap();
        let ma = t.mean(a, 1).unwrap();
        let mb = t.mean(b, 1).unwrap();
        for k in 0..2 {
            let expected = (t.value(ma).data()[k] + t.value(mb).data()[k]) / 2.0;
            assert!((t.value(m).data()[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_relu_gradient_in_linear_region() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![0.5, 1.0, 2.0, 3.0]), true);
        let r = t.relu(x).unwrap();
        let m = t.mean(r, 0).unwrap();
        t.backward(m).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn bce_sigmoid_gradient_identity() {
        for z0 in [-3.0, -0.4, 0.0, 1.7, 5.0] {
            let mut t = Tape::new();
            let z = t.leaf(Tensor::from_vec(vec![z0]), true);
            let p = t.sigmoid(z).unwrap();
            let l = t.bce(p, &[1.0]).unwrap();
            let l = t.sum_all(l).unwrap();
            t.backward(l).unwrap();
            let g = t.grad(z).unwrap().data()[0];
            assert!((g - (ops::sigmoid(z0) - 1.0)).abs() < 1e-12, "z={z0}: {g}");
        }
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        let y = t.relu(x).unwrap();
        assert!(matches!(t.backward(y), Err(TensorError::NonScalarLoss(_))));
        let s = t.sum_all(y).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.backward(s), Err(TensorError::BackwardTwice));
        t.reset_grads();
        t.backward(s).unwrap();

        let mut other = Tape::new();
        let z = other.leaf(Tensor::scalar(1.0), true);
        assert_eq!(t.backward(z), Err(TensorError::ForeignVar));
    }

    #[test]
    fn add_accumulates_shared_inputs() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![2.0, -1.0]), true);
        let y = t.add(x, x).unwrap();
        let z = t.mul(y, x).unwrap(); // 2x^2
        let s = t.sum_all(z).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[8.0, -4.0]);
    }
}
