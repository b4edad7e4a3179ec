//! Central finite-difference verification of tape gradients.

use super::{Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// Backward and finite-difference values at `worst`.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Coordinates whose ±eps probes cross a ReLU kink or BCE clamp.
    pub skipped: usize,
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape
        .value(out)
        .item()
        .ok_or_else(|| TensorError::NonScalarLoss(tape.shape(out).to_vec()))?;
    Ok((value, tape.kink_pattern()))
}

/// Compares backward gradients of the scalar function `f` against
/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every coordinate of every
/// input.
///
/// A coordinate is skipped when either probe lands on a different side of a
/// ReLU kink (or BCE clamp) than the unperturbed point, since the function is
/// not differentiable along that segment.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let base_pattern = tape.kink_pattern();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = inputs.to_vec();
    for k in 0..inputs.len() {
        for i in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + eps;
            let (fp, pp) = eval(&f, &probe)?;
            probe[k].data_mut()[i] = x0 - eps;
            let (fm, pm) = eval(&f, &probe)?;
            probe[k].data_mut()[i] = x0;
            if pp != base_pattern || pm != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[k].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((k, i));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
