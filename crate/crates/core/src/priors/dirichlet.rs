//! Chinese-restaurant draws from a Dirichlet process with uniform base measure.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletProcessSpec {
    pub alpha: f64,
}

impl Default for DirichletProcessSpec {
    fn default() -> Self {
        Self { alpha: 50.0 }
    }
}

impl DirichletProcessSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("concentration must be positive, got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

/// Draw `j` (zero-based) is fresh from `Unif[0,1]` with probability `alpha / (alpha + j)`,
/// otherwise a copy of a uniformly chosen earlier draw.
pub fn sample_dirichlet_batch<R: Rng + ?Sized>(spec: &DirichletProcessSpec, n: usize, rng: &mut R) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(n);
    for j in 0..n {
        let fresh = rng.random::<f64>() * (spec.alpha + j as f64) < spec.alpha;
        if fresh {
            out.push(rng.random());
        } else {
            let k = rng.random_range(0..j);
            out.push(out[k]);
        }
    }
    out
}

/// Expected number of distinct values among `n` draws.
pub fn expected_distinct(alpha: f64, n: usize) -> f64 {
    (0..n).map(|j| alpha / (alpha + j as f64)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn distinct(v: &[f64]) -> usize {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s.len()
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        assert!(DirichletProcessSpec::new(0.0).is_err());
        assert!(DirichletProcessSpec::new(-1.0).is_err());
    }

    #[test]
    fn values_in_unit_interval_and_first_is_fresh() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = DirichletProcessSpec::new(0.001).unwrap();
        let v = sample_dirichlet_batch(&spec, 200, &mut rng);
        assert!(v.iter().all(|t| (0.0..1.0).contains(t)));
        // Tiny alpha: everything copies the first draw with high probability.
        assert!(distinct(&v) <= 3);
    }

    #[test]
    fn mean_distinct_count_matches_harmonic_sum() {
        let expect = expected_distinct(50.0, 512);
        assert!((expect - 121.431_111_645).abs() < 1e-8, "{expect}");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = DirichletProcessSpec::default();
        let reps = 10_000;
        let total: usize = (0..reps).map(|_| distinct(&sample_dirichlet_batch(&spec, 512, &mut rng))).sum();
        let mean = total as f64 / reps as f64;
        assert!((mean - expect).abs() < 2.0, "{mean} vs {expect}");
    }

    #[test]
    fn huge_alpha_is_iid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = sample_dirichlet_batch(&DirichletProcessSpec::new(1e9).unwrap(), 100, &mut rng);
        assert_eq!(distinct(&v), 100);
    }

    #[test]
    fn exchangeable_under_position() {
        // The marginal law of position j does not depend on j; compare first and last positions.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = DirichletProcessSpec::new(5.0).unwrap();
        let (mut first, mut last) = (Vec::new(), Vec::new());
        for _ in 0..20_000 {
            let v = sample_dirichlet_batch(&spec, 20, &mut rng);
            first.push(v[0]);
            last.push(v[19]);
        }
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((m(&first) - m(&last)).abs() < 0.02);
        // Pair (0, 19) and pair (19, 0) tie with equal probability.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ties = |a: usize, b: usize, rng: &mut ChaCha8Rng| {
            (0..20_000).filter(|_| {
                let v = sample_dirichlet_batch(&spec, 20, rng);
                v[a] == v[b]
            }).count() as f64 / 20_000.0
        };
        let t1 = ties(0, 1, &mut rng);
        let t2 = ties(18, 19, &mut rng);
        // Both equal 1 / (alpha + 1) under exchangeability.
        assert!((t1 - 1.0 / 6.0).abs() < 0.015 && (t2 - 1.0 / 6.0).abs() < 0.015, "{t1} {t2}");
    }
}
