/// Regression deltas over the rows of a `frames x dim` sequence:
/// `d_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum_n n^2)` for `n = 1..=span`,
/// with the first and last rows replicated beyond the edges.
pub fn deltas(seq: &[Vec<f64>], span: usize) -> Vec<Vec<f64>> {
    let frames = seq.len();
    if frames == 0 {
        return Vec::new();
    }
    let dim = seq[0].len();
    let denom = 2.0 * (1..=span).map(|n| (n * n) as f64).sum::<f64>();
    if denom == 0.0 {
        return vec![vec![0.0; dim]; frames];
    }
    let at = |t: isize| &seq[t.clamp(0, frames as isize - 1) as usize];
    (0..frames as isize)
        .map(|t| {
            let mut d = vec![0.0; dim];
            for n in 1..=span as isize {
                let (fwd, back) = (at(t + n), at(t - n));
                for ((o, a), b) in d.iter_mut().zip(fwd).zip(back) {
                    *o += n as f64 * (a - b);
                }
            }
            d.iter_mut().for_each(|v| *v /= denom);
            d
        })
        .collect()
}
