//! Wall-clock scaling of estimators with sequence length.

use std::io::Write;
use std::time::{Duration, Instant};

use poisson_eb::estimators::Estimator;
use poisson_eb::poisson::sample_batch;
use poisson_eb::priors::sample_neural_prior;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::log_log_slope;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub estimator: String,
    pub n: usize,
    /// Median seconds per batch; `None` when the cell timed out or failed.
    pub median_seconds: Option<f64>,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingResult {
    pub rows: Vec<TimingRow>,
    /// Log-log slope of median time on `n` per estimator, over completed cells.
    pub slopes: Vec<(String, Option<f64>)>,
}

impl TimingResult {
    pub fn median(&self, id: &str, n: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.estimator == id && r.n == n).and_then(|r| r.median_seconds)
    }

    pub fn slope(&self, id: &str) -> Option<f64> {
        self.slopes.iter().find(|(e, _)| e == id).and_then(|(_, s)| *s)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["estimator", "n", "median_seconds", "timed_out", "slope"])?;
        for r in &self.rows {
            let slope = self.slope(&r.estimator).map(|s| s.to_string()).unwrap_or_default();
            csv.write_record([
                r.estimator.clone(),
                r.n.to_string(),
                r.median_seconds.map(|s| s.to_string()).unwrap_or_default(),
                r.timed_out.to_string(),
                slope,
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Median of `repeats` timed runs per (estimator, n), sequentially, on batches from one
/// neural prior scaled to `theta_max`. A run longer than `timeout` marks the cell and
/// every longer length for that estimator as timed out.
pub fn timing_benchmark(
    estimators: &[&dyn Estimator],
    lengths: &[usize],
    repeats: usize,
    theta_max: f64,
    timeout: Duration,
    seed: u64,
) -> Result<TimingResult> {
    if repeats == 0 || lengths.is_empty() || lengths.contains(&0) {
        return Err(Error::InvalidArgument("repeats and lengths must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = sample_neural_prior(&mut rng).discretize(theta_max, 20_000, 200, &mut rng)?;
    let batches: Vec<Vec<u64>> = lengths.iter().map(|&n| sample_batch(&prior, n, "timing", &mut rng).xs).collect();
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for est in estimators {
        let mut expired = false;
        let (mut ns, mut ts) = (Vec::new(), Vec::new());
        for (&n, xs) in lengths.iter().zip(&batches) {
            if expired {
                rows.push(TimingRow { estimator: est.id().into(), n, median_seconds: None, timed_out: true });
                continue;
            }
            let mut times = Vec::with_capacity(repeats);
            let mut failed = false;
            for _ in 0..repeats {
                let start = Instant::now();
                let ok = est.estimate(xs).is_ok();
                let dt = start.elapsed();
                failed |= !ok;
                times.push(dt.as_secs_f64());
                if dt > timeout {
                    expired = true;
                    break;
                }
            }
            let median_seconds = (!expired && !failed).then(|| median(times));
            if let Some(t) = median_seconds {
                ns.push(n as f64);
                ts.push(t);
            }
            rows.push(TimingRow { estimator: est.id().into(), n, median_seconds, timed_out: expired });
        }
        slopes.push((est.id().to_string(), log_log_slope(&ns, &ts).ok()));
    }
    Ok(TimingResult { rows, slopes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use poisson_eb::estimators::FnEstimator;

    #[test]
    fn quadratic_cost_has_slope_two() {
        let quad = FnEstimator::new("quad", |xs: &[u64]| {
            let mut acc = 0u64;
            for a in xs {
                for b in xs {
                    acc = acc.wrapping_add(a ^ b);
                }
            }
            Ok(vec![std::hint::black_box(acc) as f64; xs.len()])
        });
        let res = timing_benchmark(&[&quad], &[500, 1000, 2000, 4000], 5, 20.0, Duration::from_secs(10), 1).unwrap();
        let s = res.slope("quad").unwrap();
        assert!((1.6..2.4).contains(&s), "{s}");
    }

    #[test]
    fn timeout_marks_remaining_cells() {
        let slow = FnEstimator::new("slow", |xs: &[u64]| {
            std::thread::sleep(Duration::from_millis(xs.len() as u64 / 10));
            Ok(vec![0.0; xs.len()])
        });
        let res = timing_benchmark(&[&slow], &[10, 200, 400], 1, 20.0, Duration::from_millis(10), 2).unwrap();
        assert!(res.median("slow", 10).is_some());
        assert!(res.rows[1].timed_out && res.rows[2].timed_out);
    }
}
