//! Least-favorable prior on `[0, theta_max]`: the prior maximizing Bayes risk.
//!
//! The solver works on a uniform grid. The Bayes risk `mmse(w)` is concave in the
//! mixing weights and its partial derivative along atom `j` is the risk of the
//! current Bayes rule at `theta_j`, so `max_j MSE_j - mmse` is a duality gap.
//! A multiplicative-weights pass seeds the support, then Frank-Wolfe steps add the
//! grid atom with the largest risk while a Newton/multiplicative polish equalizes
//! risk across the current support.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poisson::{default_x_trunc, poisson_logpmf};
use crate::prior::DiscretePrior;

/// Environment variable naming the on-disk cache directory.
pub const CACHE_ENV: &str = "EBPOIS_CACHE_DIR";

const PRUNE: f64 = 1e-10;
const WARM_FLOOR: f64 = 1e-30;
const INNER_ITERS: usize = 200;
const LINE_SEARCH_POINTS: usize = 300;
const LOG_GAMMA_MIN: f64 = -690.0;
const LOG_GAMMA_MAX: f64 = -0.693_147_180_559_945_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseConfig {
    pub theta_max: f64,
    /// Grid spacing.
    pub spacing: f64,
    /// Absolute tolerance on `max_grid MSE - mmse`.
    pub tol: f64,
    /// Frank-Wolfe iteration budget.
    pub max_iter: usize,
    /// Multiplicative-weights iterations used to seed the support.
    pub warm_start: usize,
}

impl WorstCaseConfig {
    pub fn new(theta_max: f64) -> Self {
        Self { theta_max, spacing: 0.05, tol: 1e-5, max_iter: 2000, warm_start: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCasePrior {
    pub prior: DiscretePrior,
    pub mmse: f64,
    /// Equalization gap `max_grid MSE - mmse` of the returned prior.
    pub gap: f64,
    pub iterations: usize,
}

/// Poisson probabilities for every grid atom and `x <= x_trunc`.
struct Kernel {
    grid: Vec<f64>,
    nx: usize,
    p: Vec<f64>,
}

impl Kernel {
    fn new(grid: Vec<f64>, x_trunc: u64) -> Self {
        let nx = x_trunc as usize + 1;
        let mut p = Vec::with_capacity(grid.len() * nx);
        for &a in &grid {
            p.extend((0..nx as u64).map(|x| poisson_logpmf(x, a).exp()));
        }
        Self { grid, nx, p }
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.p[j * self.nx..(j + 1) * self.nx]
    }

    /// Marginal `m(x)` and posterior mean `g(x)` of the mixture on `support`.
    fn moments(&self, support: &[usize], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut m = vec![0.0; self.nx];
        let mut e = vec![0.0; self.nx];
        for (&j, &wj) in support.iter().zip(w) {
            if wj == 0.0 {
                continue;
            }
            let a = self.grid[j];
            for (x, p) in self.row(j).iter().enumerate() {
                m[x] += wj * p;
                e[x] += wj * a * p;
            }
        }
        let g = m.iter().zip(&e).map(|(m, e)| if *m > 0.0 { e / m } else { 0.0 }).collect();
        (m, g)
    }

    /// Bayes risk of the mixture on `support`.
    fn value(&self, support: &[usize], w: &[f64]) -> f64 {
        let (m, g) = self.moments(support, w);
        let second: f64 = support.iter().zip(w).map(|(&j, wj)| wj * self.grid[j] * self.grid[j]).sum();
        second - m.iter().zip(&g).map(|(m, g)| m * g * g).sum::<f64>()
    }

    /// `MSE_{delta_theta_j}` of the rule `g`.
    fn risk(&self, j: usize, g: &[f64]) -> f64 {
        let a = self.grid[j];
        self.row(j).iter().zip(g).map(|(p, g)| p * (a - g) * (a - g)).sum()
    }

    fn risks(&self, g: &[f64]) -> Vec<f64> {
        (0..self.grid.len()).map(|j| self.risk(j, g)).collect()
    }
}

/// Computes the least-favorable prior, failing if the gap stays above `cfg.tol`.
pub fn worst_case_prior(cfg: &WorstCaseConfig) -> Result<WorstCasePrior> {
    if !(cfg.theta_max > 0.0 && cfg.theta_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("theta_max must be positive, got {}", cfg.theta_max)));
    }
    if !(cfg.tol > 0.0 && cfg.spacing > 0.0) {
        return Err(Error::InvalidArgument("tol and spacing must be positive".into()));
    }
    let intervals = (cfg.theta_max / cfg.spacing).round() as usize;
    if intervals == 0 {
        // The grid collapses to the origin.
        let prior = DiscretePrior::new(vec![0.0], vec![1.0], cfg.theta_max)?;
        return Ok(WorstCasePrior { prior, mmse: 0.0, gap: 0.0, iterations: 0 });
    }
    let grid: Vec<f64> =
        (0..=intervals).map(|i| if i == intervals { cfg.theta_max } else { cfg.theta_max * i as f64 / intervals as f64 }).collect();
    let kernel = Kernel::new(grid, default_x_trunc(cfg.theta_max));

    let (mut support, mut w) = warm_start(&kernel, cfg.warm_start);
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        polish(&kernel, &mut support, &mut w, cfg.tol);
        let (_, g) = kernel.moments(&support, &w);
        let risks = kernel.risks(&g);
        let value = kernel.value(&support, &w);
        let (jmax, rmax) = argmax(&risks);
        gap = rmax - value;
        if gap <= cfg.tol {
            break;
        }
        frank_wolfe_step(&kernel, &mut support, &mut w, jmax);
    }
    if gap > cfg.tol {
        return Err(Error::NotConverged { iterations, gap, tol: cfg.tol });
    }

    let kept: Vec<(usize, f64)> = support.iter().copied().zip(w.iter().copied()).filter(|(_, w)| *w >= PRUNE).collect();
    let support: Vec<usize> = kept.iter().map(|(j, _)| *j).collect();
    let w: Vec<f64> = kept.iter().map(|(_, w)| *w).collect();
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / total).collect();
    let (_, g) = kernel.moments(&support, &w);
    let risks = kernel.risks(&g);
    let mmse = kernel.value(&support, &w);
    let gap = argmax(&risks).1 - mmse;
    let prior = DiscretePrior::new(support.iter().map(|&j| kernel.grid[j]).collect(), w, cfg.theta_max)?;
    Ok(WorstCasePrior { prior, mmse, gap, iterations })
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc })
}

/// Floored multiplicative weights `w_j <- w_j MSE_j / mmse` on the full grid, then keep local maxima.
fn warm_start(kernel: &Kernel, iters: usize) -> (Vec<usize>, Vec<f64>) {
    let k = kernel.grid.len();
    let all: Vec<usize> = (0..k).collect();
    let mut w = vec![1.0 / k as f64; k];
    for _ in 0..iters {
        let (_, g) = kernel.moments(&all, &w);
        let risks = kernel.risks(&g);
        let f: f64 = w.iter().zip(&risks).map(|(w, r)| w * r).sum();
        if f <= 0.0 {
            break;
        }
        // The floor lets regions the rule currently neglects regain mass.
        for (wj, r) in w.iter_mut().zip(&risks) {
            *wj = (*wj * r / f).max(WARM_FLOOR);
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
    }
    let top = w.iter().copied().fold(0.0, f64::max);
    let support: Vec<usize> = (0..k)
        .filter(|&i| (i == 0 || w[i] >= w[i - 1]) && (i == k - 1 || w[i] >= w[i + 1]) && w[i] > 1e-8 * top)
        .collect();
    let mut ws: Vec<f64> = support.iter().map(|&i| w[i]).collect();
    let s: f64 = ws.iter().sum();
    ws.iter_mut().for_each(|v| *v /= s);
    (support, ws)
}

/// Equalizes risk across a fixed support: projected Newton steps on the simplex with a
/// ratio test and backtracking, falling back to a multiplicative step.
fn polish(kernel: &Kernel, support: &mut Vec<usize>, w: &mut Vec<f64>, tol: f64) {
    for _ in 0..INNER_ITERS {
        let n = support.len();
        let (m, g) = kernel.moments(support, w);
        let resid: Vec<Vec<f64>> = support
            .iter()
            .map(|&j| {
                let a = kernel.grid[j];
                kernel.row(j).iter().zip(&g).map(|(p, g)| p * (a - g)).collect()
            })
            .collect();
        let grad: Vec<f64> = support.iter().map(|&j| kernel.risk(j, &g)).collect();
        let f0: f64 = w.iter().zip(&grad).map(|(w, r)| w * r).sum();
        let spread = grad.iter().copied().fold(f64::NEG_INFINITY, f64::max) - grad.iter().copied().fold(f64::INFINITY, f64::min);

        let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in i..n {
                let h: f64 = (0..kernel.nx).filter(|&x| m[x] > 0.0).map(|x| resid[i][x] * resid[j][x] / m[x]).sum();
                a[(i, j)] = -2.0 * h;
                a[(j, i)] = -2.0 * h;
            }
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(n + 1);
        for i in 0..n {
            b[i] = -grad[i];
        }
        let svd = a.svd(true, true);
        let cutoff = svd.singular_values.max() * 1e-15 * (n + 1) as f64;
        let newton = svd.solve(&b, cutoff).ok();

        let mut accepted = false;
        if let Some(dw) = newton {
            // Ratio test: the longest step keeping every weight nonnegative.
            let mut t_max: f64 = 1.0;
            let mut blocking = None;
            for i in 0..n {
                if dw[i] < 0.0 && -w[i] / dw[i] < t_max {
                    t_max = -w[i] / dw[i];
                    blocking = Some(i);
                }
            }
            let mut t = t_max;
            let step = |t: f64| -> Vec<f64> {
                let mut c: Vec<f64> = (0..n).map(|i| (w[i] + t * dw[i]).max(0.0)).collect();
                if let (true, Some(i)) = (t == t_max, blocking) {
                    c[i] = 0.0;
                }
                let s: f64 = c.iter().sum();
                c.iter_mut().for_each(|v| *v /= s);
                c
            };
            while t > 1e-10 && kernel.value(support, &step(t)) < f0 {
                t *= 0.5;
            }
            if t > 1e-10 {
                *w = step(t);
                accepted = true;
            }
        }
        if !accepted && f0 > 0.0 {
            let dir: Vec<f64> = (0..n).map(|i| w[i] * grad[i] / f0 - w[i]).collect();
            let step = |t: f64| -> Vec<f64> { (0..n).map(|i| (w[i] + t * dir[i]).max(0.0)).collect() };
            let mut t = 1.0;
            while t > 1e-12 && kernel.value(support, &step(t)) < f0 {
                t *= 0.5;
            }
            let mut next = step(t);
            let s: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v /= s);
            *w = next;
        }
        let keep: Vec<bool> = w.iter().map(|v| *v > 0.0).collect();
        if keep.iter().any(|k| !k) {
            let (s2, w2): (Vec<usize>, Vec<f64>) =
                support.iter().zip(w.iter()).zip(&keep).filter(|(_, k)| **k).map(|((j, v), _)| (*j, *v)).unzip();
            *support = s2;
            *w = w2;
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
        }
        let f1 = kernel.value(support, w);
        if spread < 1e-3 * tol || f1 - f0 <= 1e-15 * f0.abs() {
            break;
        }
    }
}

/// Mixes in a point mass at grid atom `j`, choosing the step by a log-spaced search.
fn frank_wolfe_step(kernel: &Kernel, support: &mut Vec<usize>, w: &mut Vec<f64>, j: usize) {
    let (m, g) = kernel.moments(support, w);
    let second: f64 = support.iter().zip(w.iter()).map(|(&i, wi)| wi * kernel.grid[i] * kernel.grid[i]).sum();
    let a = kernel.grid[j];
    let p = kernel.row(j);
    let mut best = (0.0, 0.0);
    for i in 0..LINE_SEARCH_POINTS {
        let gamma = (LOG_GAMMA_MIN + (LOG_GAMMA_MAX - LOG_GAMMA_MIN) * i as f64 / (LINE_SEARCH_POINTS - 1) as f64).exp();
        let gain = mixing_gain(&m, &g, p, a, second, gamma);
        if gain > best.0 {
            best = (gain, gamma);
        }
    }
    let gamma = best.1;
    if gamma == 0.0 {
        return;
    }
    let pos = match support.binary_search(&j) {
        Ok(pos) => pos,
        Err(pos) => {
            support.insert(pos, j);
            w.insert(pos, 0.0);
            pos
        }
    };
    w.iter_mut().for_each(|v| *v *= 1.0 - gamma);
    w[pos] += gamma;
}

/// `mmse((1-gamma) pi + gamma delta_a) - mmse(pi)`, expanded so that every term carries
/// an explicit factor of `gamma` and tiny gains are not lost to cancellation.
fn mixing_gain(m: &[f64], g: &[f64], p: &[f64], a: f64, second: f64, gamma: f64) -> f64 {
    let mut explained = 0.0;
    for x in 0..m.len() {
        let (mx, px) = (m[x], p[x]);
        if mx == 0.0 {
            // Only the new atom reaches this count.
            explained += a * a * px;
            continue;
        }
        let e = mx * g[x];
        let q = a * px;
        let mp = (1.0 - gamma) * mx + gamma * px;
        explained += ((1.0 - gamma) * (2.0 * e * q - e * e) * mx + gamma * q * q * mx - e * e * px) / (mx * mp);
    }
    gamma * (a * a - second - explained)
}

fn cache_file(dir: &Path, cfg: &WorstCaseConfig) -> PathBuf {
    dir.join(format!("worst_case_tm{}_h{}_tol{:e}.json", cfg.theta_max, cfg.spacing, cfg.tol))
}

/// Cache directory from [`CACHE_ENV`], defaulting to a folder under the system temp dir.
pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ebpois-cache"))
}

/// [`worst_case_prior`] memoized on disk under `dir`, keyed by `(theta_max, spacing, tol)`.
pub fn worst_case_prior_cached_in(dir: &Path, cfg: &WorstCaseConfig) -> Result<WorstCasePrior> {
    let path = cache_file(dir, cfg);
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(hit) = serde_json::from_str::<WorstCasePrior>(&text) {
            return Ok(hit);
        }
    }
    let fresh = worst_case_prior(cfg)?;
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_string(&fresh)?)?;
    std::fs::rename(&tmp, &path)?;
    Ok(fresh)
}

pub fn worst_case_prior_cached(cfg: &WorstCaseConfig) -> Result<WorstCasePrior> {
    worst_case_prior_cached_in(&cache_dir(), cfg)
}

/// Risk `MSE_{delta_theta}` of the Bayes rule of `prior` at each `theta` in `thetas`.
pub fn point_risks(prior: &DiscretePrior, thetas: &[f64]) -> Vec<f64> {
    let x_trunc = default_x_trunc(prior.max_atom().max(thetas.iter().copied().fold(0.0, f64::max)));
    let atoms = prior.atoms().to_vec();
    let kernel = Kernel::new(atoms, x_trunc);
    let support: Vec<usize> = (0..prior.len()).collect();
    let (_, g) = kernel.moments(&support, prior.weights());
    thetas
        .iter()
        .map(|&t| (0..kernel.nx as u64).map(|x| poisson_logpmf(x, t).exp() * (t - g[x as usize]).powi(2)).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poisson::mmse_default;

    fn solve(theta_max: f64) -> WorstCasePrior {
        worst_case_prior(&WorstCaseConfig { tol: 1e-5 * theta_max.max(1.0), ..WorstCaseConfig::new(theta_max) }).unwrap()
    }

    #[test]
    fn tiny_interval_is_point_mass_at_zero() {
        let r = worst_case_prior(&WorstCaseConfig::new(1e-9)).unwrap();
        assert_eq!(r.prior.atoms(), &[0.0]);
        assert!(r.mmse.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(worst_case_prior(&WorstCaseConfig::new(0.0)).is_err());
        assert!(worst_case_prior(&WorstCaseConfig { tol: 0.0, ..WorstCaseConfig::new(1.0) }).is_err());
    }

    #[test]
    fn non_convergence_reports_gap() {
        let cfg = WorstCaseConfig { tol: 1e-14, max_iter: 2, warm_start: 0, ..WorstCaseConfig::new(5.0) };
        match worst_case_prior(&cfg) {
            Err(Error::NotConverged { iterations: 2, gap, .. }) => assert!(gap > 1e-14),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn risk_equalizes_on_support() {
        let r = solve(5.0);
        let tol = 1e-5 * 5.0;
        assert!(r.gap <= tol);
        for (a, risk) in r.prior.atoms().iter().zip(point_risks(&r.prior, r.prior.atoms())) {
            assert!((risk - r.mmse).abs() <= tol, "atom {a}: risk {risk} vs mmse {}", r.mmse);
        }
        assert!((mmse_default(&r.prior) - r.mmse).abs() < 1e-9);
    }

    #[test]
    fn mmse_nondecreasing_in_interval() {
        let v: Vec<f64> = [1.0, 5.0, 10.0].iter().map(|&t| solve(t).mmse).collect();
        assert!(v.windows(2).all(|p| p[0] <= p[1]), "{v:?}");
    }

    #[test]
    fn deterministic() {
        let a = solve(3.0);
        let b = solve(3.0);
        assert_eq!(a.prior.atoms(), b.prior.atoms());
        for (x, y) in a.prior.weights().iter().zip(b.prior.weights()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = WorstCaseConfig::new(2.0);
        let a = worst_case_prior_cached_in(dir.path(), &cfg).unwrap();
        assert!(cache_file(dir.path(), &cfg).exists());
        let b = worst_case_prior_cached_in(dir.path(), &cfg).unwrap();
        assert_eq!(a.prior, b.prior);
        assert_eq!(a.mmse, b.mmse);
    }
}
