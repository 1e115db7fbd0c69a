//! Monte Carlo regret against the Bayes oracle.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::poisson::{mmse_default, sample_batch, Batch, BayesTable};
use crate::prior::DiscretePrior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub estimator_id: String,
    pub prior_id: String,
    /// `regret + mmse`.
    pub mse: f64,
    pub mmse: f64,
    /// Mean over batches of `mean_i (theta_hat(X_i) - theta_hat_pi(X_i))^2`.
    pub regret: f64,
    pub n: usize,
    /// Batches that produced estimates.
    pub batches: usize,
    pub std_err: f64,
    /// Plain Monte Carlo `mean (theta_hat - theta)^2` and its standard error.
    pub direct_mse: f64,
    pub direct_std_err: f64,
    pub failures: usize,
    /// Total estimator seconds.
    pub wall_time: f64,
}

/// Per-batch losses of one estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    /// Conditional (Rao-Blackwellized) regret.
    pub regret: f64,
    /// Squared error against the latent means.
    pub mse: f64,
    pub wall_time: f64,
}

/// Scores estimates of one batch against the oracle table and the latent means.
pub fn batch_loss(estimates: &[f64], batch: &Batch, oracle: &BayesTable) -> Result<(f64, f64)> {
    if estimates.len() != batch.xs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} estimates for {} observations",
            estimates.len(),
            batch.xs.len()
        )));
    }
    let n = batch.xs.len() as f64;
    let mut regret = 0.0;
    let mut mse = 0.0;
    for ((est, &x), theta) in estimates.iter().zip(&batch.xs).zip(&batch.thetas) {
        regret += (est - oracle.get(x)?).powi(2);
        mse += (est - theta).powi(2);
    }
    Ok((regret / n, mse / n))
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Aggregates per-batch losses; failed batches are `None`.
pub fn summarize(
    estimator_id: &str,
    prior_id: &str,
    n: usize,
    mmse: f64,
    losses: &[Option<BatchLoss>],
) -> Result<RegretReport> {
    let ok: Vec<BatchLoss> = losses.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(Error::Estimator { id: estimator_id.into(), reason: "every batch failed".into() });
    }
    let (regret, std_err) = mean_se(&ok.iter().map(|l| l.regret).collect::<Vec<_>>());
    let (direct_mse, direct_std_err) = mean_se(&ok.iter().map(|l| l.mse).collect::<Vec<_>>());
    Ok(RegretReport {
        estimator_id: estimator_id.into(),
        prior_id: prior_id.into(),
        mse: regret + mmse,
        mmse,
        regret,
        n,
        batches: ok.len(),
        std_err,
        direct_mse,
        direct_std_err,
        failures: losses.len() - ok.len(),
        wall_time: ok.iter().map(|l| l.wall_time).sum(),
    })
}

/// Runs `estimator` on each batch and scores it.
pub fn evaluate_batches(estimator: &dyn Estimator, batches: &[Batch], oracle: &BayesTable) -> Vec<Option<BatchLoss>> {
    batches
        .iter()
        .map(|b| {
            let res = estimator.run(&b.xs).ok()?;
            let (regret, mse) = batch_loss(&res.estimates, b, oracle).ok()?;
            Some(BatchLoss { regret, mse, wall_time: res.wall_time })
        })
        .collect()
}

/// Estimates the regret of `estimator` on `prior` from `batches` fresh batches of size `n`.
pub fn regret_eval(
    estimator: &dyn Estimator,
    prior: &DiscretePrior,
    prior_id: &str,
    n: usize,
    batches: usize,
    rng: &mut dyn RngCore,
) -> Result<RegretReport> {
    if n == 0 || batches == 0 {
        return Err(Error::InvalidArgument("n and batches must be positive".into()));
    }
    let oracle = BayesTable::covering(prior);
    let draws: Vec<Batch> = (0..batches).map(|_| sample_batch(prior, n, prior_id, rng)).collect();
    let losses = evaluate_batches(estimator, &draws, &oracle);
    summarize(estimator.id(), prior_id, n, mmse_default(prior), &losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{mle, FnEstimator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_point() -> DiscretePrior {
        DiscretePrior::new(vec![0.0, 2.0], vec![0.5, 0.5], 2.0).unwrap()
    }

    #[test]
    fn oracle_has_zero_regret() {
        let p = two_point();
        let table = BayesTable::covering(&p);
        let oracle = FnEstimator::new("bayes", move |xs: &[u64]| table.estimate(xs));
        let r = regret_eval(&oracle, &p, "two", 100, 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(r.regret, 0.0);
        assert_eq!(r.mse, r.mmse);
    }

    #[test]
    fn mle_regret_is_mean_minus_mmse() {
        let p = two_point();
        let est = FnEstimator::new("mle", |xs: &[u64]| Ok(mle(xs)));
        let r = regret_eval(&est, &p, "two", 200, 400, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let expect = 1.0 - mmse_default(&p);
        assert!((r.regret - expect).abs() < 3.0 * r.std_err, "{} vs {expect} (se {})", r.regret, r.std_err);
        assert!((r.regret - (r.mse - r.mmse)).abs() <= 1e-12);
        // Tower identity: the direct estimate agrees within combined error.
        let combined = (r.std_err.powi(2) + r.direct_std_err.powi(2)).sqrt();
        assert!((r.direct_mse - r.mmse - r.regret).abs() < 4.0 * combined);
    }

    #[test]
    fn failures_are_counted() {
        let p = two_point();
        let flaky = FnEstimator::new("flaky", |xs: &[u64]| {
            if xs.iter().sum::<u64>() % 2 == 0 {
                Ok(mle(xs))
            } else {
                Err(Error::Estimator { id: "flaky".into(), reason: "odd".into() })
            }
        });
        let r = regret_eval(&flaky, &p, "two", 20, 100, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(r.failures > 0 && r.batches > 0);
        assert_eq!(r.failures + r.batches, 100);
    }
}
