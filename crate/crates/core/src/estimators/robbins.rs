//! Robbins' plug-in estimator and its variants.

use crate::freq::FrequencyTable;

/// `(x+1) N(x+1) / N(x)` at each position.
pub fn robbins(xs: &[u64]) -> Vec<f64> {
    let t = FrequencyTable::new(xs);
    xs.iter().map(|&x| (x + 1) as f64 * t.count(x + 1) as f64 / t.count(x) as f64).collect()
}

/// `(x+1) N(x+1) / (N(x) + 1)`, a damped denominator that tempers the ratio for rare counts.
pub fn robbins_smoothed(xs: &[u64]) -> Vec<f64> {
    let t = FrequencyTable::new(xs);
    xs.iter().map(|&x| (x + 1) as f64 * t.count(x + 1) as f64 / (t.count(x) + 1) as f64).collect()
}

/// `min{(x+1) N(x+1) / N(x), m}` for `x < d`, and `m` otherwise.
pub fn robbins_clipped(xs: &[u64], d: u64, m: f64) -> Vec<f64> {
    let t = FrequencyTable::new(xs);
    xs.iter()
        .map(|&x| if x < d { ((x + 1) as f64 * t.count(x + 1) as f64 / t.count(x) as f64).min(m) } else { m })
        .collect()
}
