//! Nonparametric maximum-likelihood prior on a fixed grid, fitted by EM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq::FrequencyTable;
use crate::poisson::{bayes_estimate, poisson_logpmf};
use crate::prior::DiscretePrior;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NpmleConfig {
    /// Upper end of the grid; `None` uses `max(xs)`.
    pub theta_max: Option<f64>,
    /// Number of grid atoms; `None` uses `max(100, 4 * ceil(theta_max))`.
    pub grid_size: Option<usize>,
    /// Stop once no atom's directional derivative exceeds 1 by more than this, which
    /// bounds the log-likelihood shortfall on the grid by `n * gap_tol`.
    pub gap_tol: f64,
    /// Also stop when the log-likelihood gain relative to `max(1, |loglik|)` drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Add off-grid atoms where the directional derivative is positive after EM.
    pub refine: bool,
    /// SQUAREM extrapolation between EM steps.
    pub accelerate: bool,
}

impl Default for NpmleConfig {
    fn default() -> Self {
        Self { theta_max: None, grid_size: None, gap_tol: 1e-4, tol: 1e-10, max_iter: 20_000, refine: false, accelerate: true }
    }
}

impl NpmleConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.grid_size {
            if m < 2 {
                return Err(Error::InvalidArgument(format!("npmle grid_size must be at least 2, got {m}")));
            }
        }
        if !(self.tol > 0.0) || !(self.gap_tol > 0.0) {
            return Err(Error::InvalidArgument("npmle tol and gap_tol must be positive".into()));
        }
        if let Some(t) = self.theta_max {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("npmle theta_max {t} invalid")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpmleFit {
    pub prior: DiscretePrior,
    /// `sum_x N(x) ln f(x)`.
    pub log_likelihood: f64,
    /// `max_theta sum_x (N(x)/n) Poi(x; theta) / f(x) - 1` over the atoms considered.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Likelihood matrix with each observed value's row scaled by its maximum.
struct Lik {
    /// Relative frequency of each distinct observed value.
    freq: Vec<f64>,
    counts: Vec<f64>,
    xs: Vec<u64>,
    row_max: Vec<f64>,
    /// Row-major `distinct x` by `atoms`.
    l: Vec<f64>,
    atoms: Vec<f64>,
}

impl Lik {
    fn new(table: &FrequencyTable, atoms: Vec<f64>) -> Self {
        let n = table.n() as f64;
        let obs: Vec<(u64, u64)> = table.observed().collect();
        let m = atoms.len();
        let mut l = Vec::with_capacity(obs.len() * m);
        let mut row_max = Vec::with_capacity(obs.len());
        for &(x, _) in &obs {
            let logs: Vec<f64> = atoms.iter().map(|&a| poisson_logpmf(x, a)).collect();
            let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row_max.push(mx);
            l.extend(logs.iter().map(|v| (v - mx).exp()));
        }
        Self {
            freq: obs.iter().map(|(_, c)| *c as f64 / n).collect(),
            counts: obs.iter().map(|(_, c)| *c as f64).collect(),
            xs: obs.iter().map(|(x, _)| *x).collect(),
            row_max,
            l,
            atoms,
        }
    }

    fn m(&self) -> usize {
        self.atoms.len()
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.l[k * self.m()..(k + 1) * self.m()]
    }

    fn mixture(&self, w: &[f64]) -> Vec<f64> {
        (0..self.xs.len()).map(|k| self.row(k).iter().zip(w).map(|(l, w)| l * w).sum()).collect()
    }

    fn loglik(&self, w: &[f64]) -> f64 {
        self.mixture(w).iter().zip(&self.counts).zip(&self.row_max).map(|((f, c), r)| c * (f.ln() + r)).sum()
    }

    /// Directional derivatives `sum_k freq_k L_kj / f_k` for every atom.
    fn derivatives(&self, w: &[f64]) -> Vec<f64> {
        let f = self.mixture(w);
        let mut d = vec![0.0; self.m()];
        for (k, fk) in f.iter().enumerate() {
            if *fk <= 0.0 {
                continue;
            }
            let s = self.freq[k] / fk;
            for (dj, l) in d.iter_mut().zip(self.row(k)) {
                *dj += s * l;
            }
        }
        d
    }

    fn em_step(&self, w: &[f64]) -> Vec<f64> {
        let d = self.derivatives(w);
        let mut next: Vec<f64> = w.iter().zip(&d).map(|(w, d)| w * d).collect();
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= s);
        next
    }

    /// Directional derivative at an arbitrary `theta`, on the same row scaling.
    fn derivative_at(&self, theta: f64, f: &[f64]) -> f64 {
        self.xs
            .iter()
            .enumerate()
            .map(|(k, &x)| self.freq[k] * (poisson_logpmf(x, theta) - self.row_max[k]).exp() / f[k])
            .sum::<f64>()
            - 1.0
    }
}

fn squarem_step(lik: &Lik, w0: &[f64], ll0: f64) -> (Vec<f64>, f64) {
    let w1 = lik.em_step(w0);
    let w2 = lik.em_step(&w1);
    let r: Vec<f64> = w1.iter().zip(w0).map(|(a, b)| a - b).collect();
    let v: Vec<f64> = w2.iter().zip(&w1).zip(&r).map(|((c, b), r)| c - b - r).collect();
    let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let fallback = |w2: Vec<f64>| {
        let ll = lik.loglik(&w2);
        (w2, ll)
    };
    if vn == 0.0 || rn == 0.0 {
        return fallback(w2);
    }
    // Halve the step toward alpha = -1 (which reproduces w2) until every weight stays
    // positive; multiplicative EM cannot revive an atom once it reaches zero.
    let mut alpha = (-rn / vn).min(-1.0);
    let mut cand: Vec<f64>;
    loop {
        cand = w0.iter().zip(&r).zip(&v).map(|((w, r), v)| w - 2.0 * alpha * r + alpha * alpha * v).collect();
        if cand.iter().all(|&c| c > 0.0) || alpha >= -1.0 {
            break;
        }
        alpha = (alpha - 1.0) / 2.0;
        if alpha > -1.0 - 1e-3 {
            alpha = -1.0;
        }
    }
    if cand.iter().any(|&c| !(c > 0.0)) {
        return fallback(w2);
    }
    let s: f64 = cand.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return fallback(w2);
    }
    cand.iter_mut().for_each(|x| *x /= s);
    let stabilized = lik.em_step(&cand);
    let ll = lik.loglik(&stabilized);
    if ll.is_finite() && ll >= ll0 {
        (stabilized, ll)
    } else {
        fallback(w2)
    }
}

fn run_em(lik: &Lik, mut w: Vec<f64>, cfg: &NpmleConfig, used: &mut usize) -> (Vec<f64>, f64, bool) {
    let mut ll = lik.loglik(&w);
    while *used < cfg.max_iter {
        if lik.derivatives(&w).into_iter().fold(f64::NEG_INFINITY, f64::max) - 1.0 <= cfg.gap_tol {
            return (w, ll, true);
        }
        *used += 1;
        let (next, ll_next) = if cfg.accelerate {
            squarem_step(lik, &w, ll)
        } else {
            let n = lik.em_step(&w);
            let l = lik.loglik(&n);
            (n, l)
        };
        let gain = ll_next - ll;
        w = next;
        ll = ll_next;
        if gain.abs() < cfg.tol * ll.abs().max(1.0) {
            return (w, ll, true);
        }
    }
    (w, ll, false)
}

/// Fits the grid NPMLE to `xs`.
pub fn npmle_fit(xs: &[u64], cfg: &NpmleConfig) -> Result<NpmleFit> {
    cfg.validate()?;
    if xs.is_empty() {
        return Err(Error::InvalidArgument("npmle needs at least one observation".into()));
    }
    let table = FrequencyTable::new(xs);
    let upper = cfg.theta_max.unwrap_or(table.max_x().unwrap() as f64);
    if upper == 0.0 {
        let ll = xs.iter().map(|&x| poisson_logpmf(x, 0.0)).sum();
        return Ok(NpmleFit { prior: DiscretePrior::point_mass(0.0)?, log_likelihood: ll, gap: 0.0, iterations: 0, converged: true });
    }
    let m = cfg.grid_size.unwrap_or_else(|| 100.max(4 * upper.ceil() as usize));
    let atoms: Vec<f64> = (0..m).map(|j| if j == m - 1 { upper } else { upper * j as f64 / (m - 1) as f64 }).collect();
    let mut lik = Lik::new(&table, atoms);
    let mut used = 0;
    let (mut w, mut ll, mut converged) = run_em(&lik, vec![1.0 / m as f64; m], cfg, &mut used);

    if cfg.refine {
        let f = lik.mixture(&w);
        let fine = 8 * m;
        let mut added: Vec<f64> = Vec::new();
        let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..=fine {
            let t = upper * i as f64 / fine as f64;
            let d = lik.derivative_at(t, &f);
            // `prev.1` is a local maximum when it beats both neighbours.
            if prev.1 > 0.0 && prev.1 >= d && prev.1 >= prev.0 {
                let t_prev = upper * (i - 1) as f64 / fine as f64;
                if lik.atoms.iter().all(|a| (a - t_prev).abs() > 1e-12) {
                    added.push(t_prev);
                }
            }
            prev = (prev.1, d);
        }
        if !added.is_empty() {
            let mut pairs: Vec<(f64, f64)> = lik.atoms.iter().copied().zip(w.iter().copied()).collect();
            pairs.extend(added.iter().map(|&a| (a, 1e-3)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (atoms, mut w2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let s: f64 = w2.iter().sum();
            w2.iter_mut().for_each(|v| *v /= s);
            lik = Lik::new(&table, atoms);
            let (w3, ll3, c3) = run_em(&lik, w2, cfg, &mut used);
            w = w3;
            ll = ll3;
            converged = c3;
        }
    }

    let gap = lik.derivatives(&w).into_iter().fold(f64::NEG_INFINITY, f64::max) - 1.0;
    let prior = DiscretePrior::from_unnormalized(lik.atoms.clone(), w, upper)?;
    Ok(NpmleFit { prior, log_likelihood: ll, gap, iterations: used, converged })
}

/// Log-likelihood `sum_i ln f_prior(x_i)` of an arbitrary prior.
pub fn log_likelihood(xs: &[u64], prior: &DiscretePrior) -> f64 {
    FrequencyTable::new(xs).observed().map(|(x, c)| c as f64 * crate::poisson::mixture_logpmf(prior, x)).sum()
}

/// Plug-in Bayes rule of the fitted NPMLE at each position.
pub fn npmle_estimate(xs: &[u64], cfg: &NpmleConfig) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let fit = npmle_fit(xs, cfg)?;
    plug_in(xs, &fit.prior)
}

/// Evaluates the Bayes rule of `prior` once per distinct value of `xs`.
pub fn plug_in(xs: &[u64], prior: &DiscretePrior) -> Result<Vec<f64>> {
    let table = FrequencyTable::new(xs);
    let mut cache = vec![f64::NAN; table.counts().len()];
    for (x, _) in table.observed() {
        cache[x as usize] = bayes_estimate(prior, x)?;
    }
    Ok(xs.iter().map(|&x| cache[x as usize]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poisson::sample_batch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_zeros_is_point_mass_at_zero() {
        let fit = npmle_fit(&[0, 0, 0, 0], &NpmleConfig::default()).unwrap();
        assert!(fit.prior.pmf(0.0) >= 1.0 - 1e-6);
        assert_eq!(npmle_estimate(&[0, 0, 0, 0], &NpmleConfig::default()).unwrap(), vec![0.0; 4]);
        let cfg = NpmleConfig { theta_max: Some(10.0), ..NpmleConfig::default() };
        let fit = npmle_fit(&[0, 0, 0, 0], &cfg).unwrap();
        // EM approaches a boundary optimum sublinearly, so a small residual remains.
        assert!(fit.prior.pmf(0.0) >= 1.0 - 1e-3, "{:?}", &fit.prior.weights()[..5]);
        assert!(fit.gap <= 1e-4);
    }

    #[test]
    fn constant_sample_concentrates_near_value() {
        let cfg = NpmleConfig { theta_max: Some(10.0), ..NpmleConfig::default() };
        let fit = npmle_fit(&[2, 2, 2, 2], &cfg).unwrap();
        // Single-atom oracle: the likelihood of delta_t is maximized at t = 2.
        let (best, _) = fit.prior.atoms().iter().zip(fit.prior.weights()).fold((0.0, 0.0), |acc, (a, w)| if *w > acc.1 { (*a, *w) } else { acc });
        let spacing = 10.0 / 99.0;
        assert!((best - 2.0f64).abs() <= spacing, "{best}");
        for v in npmle_estimate(&[2, 2, 2, 2], &cfg).unwrap() {
            assert!((v - 2.0).abs() < 0.1, "{v}");
        }
    }

    #[test]
    fn dominates_generating_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..100 {
            let atoms: Vec<f64> = (0..4).map(|k| k as f64 * 3.0).collect();
            let truth = DiscretePrior::new(atoms, vec![0.25; 4], 9.0).unwrap();
            let batch = sample_batch(&truth, 200, "t", &mut rng);
            let cfg = NpmleConfig { theta_max: Some(9.0), grid_size: Some(4), ..NpmleConfig::default() };
            let fit = npmle_fit(&batch.xs, &cfg).unwrap();
            let ll_truth = log_likelihood(&batch.xs, &truth);
            assert!(fit.log_likelihood >= ll_truth - 1e-9, "case {case}: {} < {ll_truth}", fit.log_likelihood);
            assert!((fit.log_likelihood - log_likelihood(&batch.xs, &fit.prior)).abs() < 1e-8);
        }
    }

    #[test]
    fn estimates_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = DiscretePrior::new(vec![1.0, 5.0, 12.0], vec![0.3, 0.4, 0.3], 12.0).unwrap();
        let xs = sample_batch(&truth, 1000, "t", &mut rng).xs;
        let fit = npmle_fit(&xs, &NpmleConfig::default()).unwrap();
        let g: Vec<f64> = (0..40).map(|x| bayes_estimate(&fit.prior, x).unwrap()).collect();
        assert!(g.windows(2).all(|p| p[0] <= p[1] + 1e-9));
    }

    #[test]
    fn refinement_does_not_lower_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = DiscretePrior::new(vec![0.7, 6.3], vec![0.5, 0.5], 7.0).unwrap();
        let xs = sample_batch(&truth, 500, "t", &mut rng).xs;
        let base = npmle_fit(&xs, &NpmleConfig::default()).unwrap();
        let refined = npmle_fit(&xs, &NpmleConfig { refine: true, ..NpmleConfig::default() }).unwrap();
        assert!(refined.log_likelihood >= base.log_likelihood - 1e-6);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(npmle_fit(&[1], &NpmleConfig { grid_size: Some(1), ..NpmleConfig::default() }).is_err());
        assert!(npmle_fit(&[1], &NpmleConfig { tol: 0.0, ..NpmleConfig::default() }).is_err());
        assert!(npmle_fit(&[], &NpmleConfig::default()).is_err());
    }
}
