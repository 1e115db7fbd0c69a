//! Paired t-tests and Plackett-Luce ranking fits.

use std::collections::HashMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// One-sided paired t-test of `mean(a - b) < 0`; returns the p-value.
///
/// Differences with zero spread are decided by their sign (p = 0 or 1); all-zero
/// differences are degenerate.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!("need equal lengths >= 2, got {} and {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let k = d.len() as f64;
    let mean = d.iter().sum::<f64>() / k;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    if !(mean.is_finite() && var.is_finite()) {
        return Err(Error::Degenerate("non-finite losses".into()));
    }
    if var == 0.0 {
        return match mean.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Less) => Ok(0.0),
            Some(std::cmp::Ordering::Greater) => Ok(1.0),
            _ => Err(Error::Degenerate("all paired differences are zero".into())),
        };
    }
    let t = mean / (var / k).sqrt();
    let dist = StudentsT::new(0.0, 1.0, k - 1.0).expect("positive degrees of freedom");
    Ok(dist.cdf(t))
}

/// Coefficient bound applied when an estimator always (or never) wins.
pub const PL_COEF_CAP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlackettLuceFit {
    pub ids: Vec<String>,
    /// Log-strengths with the anchor at exactly zero.
    pub coefficients: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    /// Ids whose coefficient hit [`PL_COEF_CAP`].
    pub capped: Vec<String>,
}

impl PlackettLuceFit {
    pub fn coefficient(&self, id: &str) -> Option<f64> {
        self.ids.iter().position(|i| i == id).map(|k| self.coefficients[k])
    }
}

fn pl_log_likelihood(records: &[Vec<usize>], gamma: &[f64]) -> f64 {
    records
        .iter()
        .map(|r| {
            let mut rest: f64 = r.iter().map(|&i| gamma[i]).sum();
            let mut ll = 0.0;
            for &i in &r[..r.len() - 1] {
                ll += gamma[i].ln() - rest.ln();
                rest -= gamma[i];
            }
            ll
        })
        .sum()
}

/// Maximum-likelihood Plackett-Luce strengths by minorization-maximization.
///
/// Each record lists every estimator id once, best first. Iterates until the largest
/// change in log-strength drops below `1e-8` or `max_iter` is reached.
pub fn plackett_luce_fit(records: &[Vec<String>], anchor: &str, max_iter: usize) -> Result<PlackettLuceFit> {
    let first = records.first().ok_or_else(|| Error::InvalidArgument("no ranking records".into()))?;
    let mut ids: Vec<String> = first.clone();
    ids.sort();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if ids.len() < 2 || index.len() != ids.len() {
        return Err(Error::InvalidArgument("records need at least two distinct ids".into()));
    }
    let anchor_idx = *index.get(anchor).ok_or_else(|| Error::InvalidArgument(format!("anchor `{anchor}` absent")))?;
    let mut ranked = Vec::with_capacity(records.len());
    for r in records {
        let mut seen = vec![false; ids.len()];
        let mut row = Vec::with_capacity(r.len());
        for id in r {
            let &i = index.get(id.as_str()).ok_or_else(|| Error::InvalidArgument(format!("unknown id `{id}`")))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("id `{id}` repeated in a record")));
            }
            row.push(i);
        }
        if row.len() != ids.len() {
            return Err(Error::InvalidArgument("incomplete ranking record".into()));
        }
        ranked.push(row);
    }

    let m = ids.len();
    let mut wins = vec![0.0; m];
    for r in &ranked {
        for &i in &r[..m - 1] {
            wins[i] += 1.0;
        }
    }
    let floor = (-PL_COEF_CAP).exp();
    let mut gamma = vec![1.0; m];
    let mut lls = vec![pl_log_likelihood(&ranked, &gamma)];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut denom = vec![0.0; m];
        for r in &ranked {
            let mut rest: f64 = r.iter().map(|&i| gamma[i]).sum();
            let mut acc = 0.0;
            for (stage, &i) in r.iter().enumerate() {
                if stage < m - 1 {
                    acc += 1.0 / rest;
                }
                // Every item still present at stage j shares the 1 / rest term.
                denom[i] += acc;
                rest -= gamma[i];
            }
        }
        let mut next: Vec<f64> = wins.iter().zip(&denom).map(|(w, d)| w / d).collect();
        // Items that never win would collapse to zero; hold them at a fixed fraction of the strongest.
        let lowest = floor * next.iter().cloned().fold(0.0, f64::max);
        let clamped = next.iter().any(|&g| g < lowest);
        next.iter_mut().for_each(|g| *g = g.max(lowest));
        let scale = next[anchor_idx];
        next.iter_mut().for_each(|g| *g /= scale);
        let change = next.iter().zip(&gamma).map(|(a, b)| (a.ln() - b.ln()).abs()).fold(0.0, f64::max);
        gamma = next;
        let ll = pl_log_likelihood(&ranked, &gamma);
        let prev = *lls.last().expect("initial value");
        // The clamp is a projection, not an MM step, so only unclamped steps must ascend.
        if !clamped {
            assert!(ll >= prev - 1e-9 * prev.abs().max(1.0), "MM log-likelihood decreased: {prev} -> {ll}");
        }
        lls.push(ll);
        if change < 1e-8 || gamma.iter().any(|g| g.ln().abs() > PL_COEF_CAP + 1.0) {
            break;
        }
    }
    let mut capped = Vec::new();
    let coefficients = gamma
        .iter()
        .zip(&ids)
        .map(|(g, id)| {
            let c = g.ln();
            if c.abs() >= PL_COEF_CAP {
                capped.push(id.clone());
            }
            c.clamp(-PL_COEF_CAP, PL_COEF_CAP)
        })
        .collect();
    Ok(PlackettLuceFit { ids, coefficients, log_likelihood: lls, iterations, capped })
}

/// Ids ordered by ascending loss (ties broken by id).
pub fn rank_by_loss(losses: &[(String, f64)]) -> Vec<String> {
    let mut v: Vec<&(String, f64)> = losses.iter().collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().map(|(id, _)| id.clone()).collect()
}

/// Ordinary least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("need >= 2 positive pairs".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values equal".into()));
    }
    Ok(sxy / sxx)
}

/// Mean and half-width of the normal-approximation 95% interval.
pub fn mean_ci95(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    (mean, 1.96 * sd / k.sqrt())
}
