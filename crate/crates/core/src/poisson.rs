//! Poisson likelihoods, mixture densities, posterior means and Bayes risk.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::prior::{DiscretePrior, ThetaSource};

/// Tail mass allowed beyond the truncation point in [`mmse`].
pub const TAIL_TOL: f64 = 1e-12;

/// `ln P(X = x)` for `X ~ Poi(theta)`; `theta = 0` gives the exact point mass at zero.
pub fn poisson_logpmf(x: u64, theta: f64) -> f64 {
    if theta == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -theta + x as f64 * theta.ln() - ln_factorial(x)
}

/// Numerically stable `ln sum exp(v)`; the empty sum is `-inf`.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `ln f_pi(x) = ln sum_j w_j Poi(x; a_j)`.
pub fn mixture_logpmf(prior: &DiscretePrior, x: u64) -> f64 {
    log_sum_exp(
        prior
            .atoms()
            .iter()
            .zip(prior.weights())
            .filter(|(_, w)| **w > 0.0)
            .map(|(a, w)| w.ln() + poisson_logpmf(x, *a)),
    )
}

/// Posterior mean `(x+1) f_pi(x+1) / f_pi(x)` evaluated in log space.
pub fn bayes_estimate(prior: &DiscretePrior, x: u64) -> Result<f64> {
    let lf = mixture_logpmf(prior, x);
    if lf == f64::NEG_INFINITY {
        return Err(Error::OutsideSupport { x });
    }
    let lf1 = mixture_logpmf(prior, x + 1);
    Ok((x + 1) as f64 * (lf1 - lf).exp())
}

/// Posterior mean `sum_j w'_j a_j` with posterior weights `w'_j ∝ w_j Poi(x; a_j)`.
pub fn bayes_estimate_posterior(prior: &DiscretePrior, x: u64) -> Result<f64> {
    let logs: Vec<f64> = prior
        .atoms()
        .iter()
        .zip(prior.weights())
        .map(|(a, w)| if *w > 0.0 { w.ln() + poisson_logpmf(x, *a) } else { f64::NEG_INFINITY })
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::OutsideSupport { x });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (a, l) in prior.atoms().iter().zip(&logs) {
        let p = (l - m).exp();
        num += p * a;
        den += p;
    }
    Ok(num / den)
}

/// Log of the Chernoff bound `(e theta)^x e^{-theta} / x^x` on `P(X >= x)`, valid for `x > theta`.
pub fn log_tail_bound(theta: f64, x: u64) -> f64 {
    let xf = x as f64;
    if theta == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    xf * (1.0 + theta.ln()) - theta - xf * xf.ln()
}

/// Smallest truncation point `t` such that `P(X > t) < 1e-12` for every `theta <= theta_max`.
pub fn default_x_trunc(theta_max: f64) -> u64 {
    if theta_max <= 0.0 {
        return 0;
    }
    let target = TAIL_TOL.ln();
    let mut k = theta_max.floor() as u64 + 1;
    while log_tail_bound(theta_max, k) >= target {
        k += 1;
    }
    k - 1
}

/// Bayes risk `E[theta^2] - sum_{x <= x_trunc} e(x)^2 / m(x)` where `m = f_pi` and
/// `e(x) = E[theta Poi(x; theta)]`. The omitted tail is at most `max_atom^2 * 1e-12`.
pub fn mmse(prior: &DiscretePrior, x_trunc: u64) -> Result<f64> {
    let required = default_x_trunc(prior.max_atom());
    if x_trunc < required {
        return Err(Error::TruncationTooSmall { given: x_trunc, required });
    }
    let pairs: Vec<(f64, f64)> = prior
        .atoms()
        .iter()
        .zip(prior.weights())
        .filter(|(_, w)| **w > 0.0)
        .map(|(a, w)| (*a, w.ln()))
        .collect();
    let mut explained = 0.0;
    for x in 0..=x_trunc {
        let lm = log_sum_exp(pairs.iter().map(|(a, lw)| lw + poisson_logpmf(x, *a)));
        if lm == f64::NEG_INFINITY {
            continue;
        }
        let le = log_sum_exp(
            pairs.iter().filter(|(a, _)| *a > 0.0).map(|(a, lw)| lw + a.ln() + poisson_logpmf(x, *a)),
        );
        explained += (2.0 * le - lm).exp();
    }
    Ok((prior.second_moment() - explained).max(0.0))
}

/// [`mmse`] at the default truncation for the prior's largest atom.
pub fn mmse_default(prior: &DiscretePrior) -> f64 {
    mmse(prior, default_x_trunc(prior.max_atom())).expect("default truncation is sufficient")
}

/// Posterior means for `x = 0..len`, with fallback evaluation beyond the table.
#[derive(Debug, Clone)]
pub struct BayesTable {
    prior: DiscretePrior,
    table: Vec<Option<f64>>,
}

impl BayesTable {
    pub fn new(prior: &DiscretePrior, len: u64) -> Self {
        let table = (0..len).map(|x| bayes_estimate(prior, x).ok()).collect();
        Self { prior: prior.clone(), table }
    }

    /// Table sized to cover every count plausible under the prior.
    pub fn covering(prior: &DiscretePrior) -> Self {
        Self::new(prior, default_x_trunc(prior.max_atom()) + 2)
    }

    pub fn prior(&self) -> &DiscretePrior {
        &self.prior
    }

    pub fn get(&self, x: u64) -> Result<f64> {
        match self.table.get(x as usize) {
            Some(Some(v)) => Ok(*v),
            Some(None) => Err(Error::OutsideSupport { x }),
            None => bayes_estimate(&self.prior, x),
        }
    }

    pub fn estimate(&self, xs: &[u64]) -> Result<Vec<f64>> {
        xs.iter().map(|&x| self.get(x)).collect()
    }
}

/// Paired observations and latent means drawn from one prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub xs: Vec<u64>,
    pub thetas: Vec<f64>,
    pub prior_id: String,
}

/// Draws one `X ~ Poi(theta)`.
pub fn sample_poisson<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> u64 {
    if theta <= 0.0 {
        return 0;
    }
    let d = Poisson::new(theta).expect("finite positive rate");
    d.sample(rng) as u64
}

/// Samples `n` latent means from `source` and Poisson observations given them.
pub fn sample_batch<S: ThetaSource + ?Sized>(source: &S, n: usize, prior_id: &str, rng: &mut dyn rand::RngCore) -> Batch {
    let thetas = source.sample_thetas(n, rng);
    let xs = thetas.iter().map(|&t| sample_poisson(t, rng)).collect();
    Batch { xs, thetas, prior_id: prior_id.to_string() }
}
