//! Finite atomic priors on `[0, theta_max]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the weight sum accepted by [`DiscretePrior::new`] before renormalizing.
const SUM_SLACK: f64 = 1e-9;

/// A finite distribution `sum_j w_j delta(a_j)` with strictly increasing atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrior", into = "RawPrior")]
pub struct DiscretePrior {
    theta_max: f64,
    atoms: Vec<f64>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPrior {
    theta_max: f64,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<RawPrior> for DiscretePrior {
    type Error = Error;

    fn try_from(raw: RawPrior) -> Result<Self> {
        DiscretePrior::new(raw.atoms, raw.weights, raw.theta_max)
    }
}

impl From<DiscretePrior> for RawPrior {
    fn from(p: DiscretePrior) -> Self {
        RawPrior { theta_max: p.theta_max, atoms: p.atoms, weights: p.weights }
    }
}

impl DiscretePrior {
    /// Validates and builds a prior. Weights must already sum to one within `1e-9`;
    /// they are renormalized so the stored sum is exact to rounding.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>, theta_max: f64) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_SLACK {
            return Err(Error::InvalidPrior(format!("weights sum to {total}, expected 1")));
        }
        Self::from_unnormalized(atoms, weights, theta_max)
    }

    /// Builds a prior from nonnegative weights with a positive sum.
    pub fn from_unnormalized(atoms: Vec<f64>, weights: Vec<f64>, theta_max: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidPrior("no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::InvalidPrior(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if !(theta_max.is_finite() && theta_max >= 0.0) {
            return Err(Error::InvalidPrior(format!("theta_max {theta_max} is not a finite nonnegative number")));
        }
        for (i, &a) in atoms.iter().enumerate() {
            if !(a.is_finite() && (0.0..=theta_max).contains(&a)) {
                return Err(Error::InvalidPrior(format!("atom {a} outside [0, {theta_max}]")));
            }
            if i > 0 && a <= atoms[i - 1] {
                return Err(Error::InvalidPrior("atoms must be strictly increasing".into()));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidPrior("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidPrior("weights sum to zero".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self { theta_max, atoms, weights, cumulative })
    }

    /// Collapses arbitrary (unsorted, possibly repeated) atoms into a valid prior.
    pub fn from_pairs(mut pairs: Vec<(f64, f64)>, theta_max: f64) -> Result<Self> {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            match atoms.last() {
                Some(&last) if last == a => *weights.last_mut().unwrap() += w,
                _ => {
                    atoms.push(a);
                    weights.push(w);
                }
            }
        }
        Self::from_unnormalized(atoms, weights, theta_max)
    }

    pub fn point_mass(c: f64) -> Result<Self> {
        Self::new(vec![c], vec![1.0], c)
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Largest atom carrying positive weight.
    pub fn max_atom(&self) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .rev()
            .find(|(_, w)| **w > 0.0)
            .map_or(0.0, |(a, _)| *a)
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(a, w)| a * a * w).sum()
    }

    /// Weight of the atom exactly equal to `theta`, zero if absent.
    pub fn pmf(&self, theta: f64) -> f64 {
        self.atoms
            .binary_search_by(|a| a.total_cmp(&theta))
            .map_or(0.0, |i| self.weights[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.atoms[i.min(self.atoms.len() - 1)]
    }
}

/// Anything that can emit a batch of latent means.
pub trait ThetaSource {
    fn sample_thetas(&self, n: usize, rng: &mut dyn rand::RngCore) -> Vec<f64>;
}

impl ThetaSource for DiscretePrior {
    fn sample_thetas(&self, n: usize, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}
