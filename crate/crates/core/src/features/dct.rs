use std::f64::consts::PI;

/// Orthonormal DCT-II as a precomputed `n_out x n_in` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dct {
    n_in: usize,
    rows: Vec<Vec<f64>>,
}

impl Dct {
    /// Keeps coefficients `0..n_out` of an `n_in`-point transform.
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let rows = (0..n_out.min(n_in))
            .map(|k| {
                let scale = if k == 0 { (1.0 / n_in as f64).sqrt() } else { (2.0 / n_in as f64).sqrt() };
                (0..n_in)
                    .map(|n| scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos())
                    .collect()
            })
            .collect();
        Self { n_in, rows }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// Transpose product; the inverse when all coefficients are kept.
    pub fn apply_transpose(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_in];
        for (row, &ck) in self.rows.iter().zip(c) {
            for (o, &r) in out.iter_mut().zip(row) {
                *o += ck * r;
            }
        }
        out
    }
}
