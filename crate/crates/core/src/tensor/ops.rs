//! Forward and backward kernels on raw slices. Shapes are validated by the
//! tape before these run.

use super::gemm::{gemm_acc, View};

pub(crate) const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub time: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvDims {
    /// Time offset of tap `j` and the output rows `[lo, hi)` whose input
    /// index `t + offset` stays inside the sequence.
    fn tap(&self, j: usize) -> Option<(isize, usize, usize)> {
        let center = (self.kernel / 2) as isize;
        let offset = (j as isize - center) * self.dilation as isize;
        let t = self.time as isize;
        let lo = (-offset).max(0);
        let hi = (t - offset).min(t);
        (hi > lo).then_some((offset, lo as usize, hi as usize))
    }
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], b: &[f64], d: ConvDims) -> Vec<f64> {
    let mut y = vec![0.0; d.batch * d.time * d.c_out];
    for row in y.chunks_exact_mut(d.c_out) {
        row.copy_from_slice(b);
    }
    for n in 0..d.batch {
        for j in 0..d.kernel {
            let Some((offset, lo, hi)) = d.tap(j) else {
                continue;
            };
            let rows = hi - lo;
            let x_row = (n * d.time) as isize + lo as isize + offset;
            gemm_acc(
                x,
                View::row_major(x_row as usize * d.c_in, rows, d.c_in),
                w,
                View::row_major(j * d.c_in * d.c_out, d.c_in, d.c_out),
                &mut y,
                View::row_major((n * d.time + lo) * d.c_out, rows, d.c_out),
            );
        }
    }
    y
}

pub(crate) fn conv1d_backward_input(dy: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let mut dx = vec![0.0; d.batch * d.time * d.c_in];
    for n in 0..d.batch {
        for j in 0..d.kernel {
            let Some((offset, lo, hi)) = d.tap(j) else {
                continue;
            };
            let rows = hi - lo;
            let x_row = (n * d.time) as isize + lo as isize + offset;
            gemm_acc(
                dy,
                View::row_major((n * d.time + lo) * d.c_out, rows, d.c_out),
                w,
                View::transposed(j * d.c_in * d.c_out, d.c_in, d.c_out, d.c_out),
                &mut dx,
                View::row_major(x_row as usize * d.c_in, rows, d.c_in),
            );
        }
    }
    dx
}

pub(crate) fn conv1d_backward_weight(x: &[f64], dy: &[f64], d: ConvDims) -> Vec<f64> {
    let mut dw = vec![0.0; d.kernel * d.c_in * d.c_out];
    for n in 0..d.batch {
        for j in 0..d.kernel {
            let Some((offset, lo, hi)) = d.tap(j) else {
                continue;
            };
            let rows = hi - lo;
            let x_row = (n * d.time) as isize + lo as isize + offset;
            gemm_acc(
                x,
                View::transposed(x_row as usize * d.c_in, rows, d.c_in, d.c_in),
                dy,
                View::row_major((n * d.time + lo) * d.c_out, rows, d.c_out),
                &mut dw,
                View::row_major(j * d.c_in * d.c_out, d.c_in, d.c_out),
            );
        }
    }
    dw
}

/// Column sums of a row-major `[rows, cols]` buffer.
pub(crate) fn column_sums(dy: &[f64], cols: usize) -> Vec<f64> {
    let mut db = vec![0.0; cols];
    for row in dy.chunks_exact(cols) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    db
}

pub(crate) fn affine_forward(x: &[f64], w: &[f64], b: &[f64], rows: usize, fin: usize, fout: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * fout];
    for row in y.chunks_exact_mut(fout) {
        row.copy_from_slice(b);
    }
    gemm_acc(
        x,
        View::row_major(0, rows, fin),
        w,
        View::row_major(0, fin, fout),
        &mut y,
        View::row_major(0, rows, fout),
    );
    y
}

pub(crate) fn affine_backward_input(dy: &[f64], w: &[f64], rows: usize, fin: usize, fout: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * fin];
    gemm_acc(
        dy,
        View::row_major(0, rows, fout),
        w,
        View::transposed(0, fin, fout, fout),
        &mut dx,
        View::row_major(0, rows, fin),
    );
    dx
}

pub(crate) fn affine_backward_weight(x: &[f64], dy: &[f64], rows: usize, fin: usize, fout: usize) -> Vec<f64> {
    let mut dw = vec![0.0; fin * fout];
    gemm_acc(
        x,
        View::transposed(0, rows, fin, fin),
        dy,
        View::row_major(0, rows, fout),
        &mut dw,
        View::row_major(0, fin, fout),
    );
    dw
}

/// Splits a shape around `axis` into (outer, axis length, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn mean_axis_forward(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for a in 0..len {
            let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
            for (acc, v) in dst.iter_mut().zip(src) {
                *acc += v;
            }
        }
        let scale = 1.0 / len as f64;
        dst.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

pub(crate) fn mean_axis_backward(dy: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = split_axis(shape, axis);
    let scale = 1.0 / len as f64;
    let mut dx = vec![0.0; outer * len * inner];
    for o in 0..outer {
        let src = &dy[o * inner..(o + 1) * inner];
        for a in 0..len {
            let dst = &mut dx[(o * len + a) * inner..(o * len + a + 1) * inner];
            for (d, g) in dst.iter_mut().zip(src) {
                *d = g * scale;
            }
        }
    }
    dx
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d bce / dp, evaluated at the clamped probability.
pub(crate) fn bce_grad(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    (p - y) / (p * (1.0 - p))
}
