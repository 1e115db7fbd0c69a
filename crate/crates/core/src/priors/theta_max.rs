//! Random scale `theta_max` used to diversify training priors.

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Exp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThetaMaxLaw {
    /// Mixture weights of the uniform, exponential and Cauchy branches.
    pub weights: [f64; 3],
    pub uniform_upper: f64,
    /// Mean of the exponential branch.
    pub exp_scale: f64,
    pub cauchy_location: f64,
    pub cauchy_scale: f64,
    pub cap: f64,
}

impl Default for ThetaMaxLaw {
    fn default() -> Self {
        Self {
            weights: [0.75, 0.125, 0.125],
            uniform_upper: 200.0,
            exp_scale: 50.0,
            cauchy_location: 50.0,
            cauchy_scale: 10.0,
            cap: 500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Uniform,
    Exponential,
    Cauchy,
}

impl ThetaMaxLaw {
    pub fn validate(&self) -> crate::Result<()> {
        let weights_ok = self.weights.iter().all(|w| *w >= 0.0 && w.is_finite()) && self.weights.iter().sum::<f64>() > 0.0;
        let scales_ok = [self.uniform_upper, self.exp_scale, self.cauchy_scale, self.cap]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !(weights_ok && scales_ok && self.cauchy_location.is_finite()) {
            return Err(crate::Error::InvalidArgument(format!("invalid theta_max law {self:?}")));
        }
        Ok(())
    }

    /// One draw, clamped into `[0, cap]`, with the branch that produced it.
    pub fn sample_with_branch<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, Branch) {
        let total: f64 = self.weights.iter().sum();
        let r = rng.random::<f64>() * total;
        let (raw, branch) = if r < self.weights[0] {
            (rng.random::<f64>() * self.uniform_upper, Branch::Uniform)
        } else if r < self.weights[0] + self.weights[1] {
            (Exp::new(1.0 / self.exp_scale).expect("positive rate").sample(rng), Branch::Exponential)
        } else {
            (Cauchy::new(self.cauchy_location, self.cauchy_scale).expect("positive scale").sample(rng), Branch::Cauchy)
        };
        (raw.clamp(0.0, self.cap), branch)
    }
}

pub fn sample_theta_max<R: Rng + ?Sized>(law: &ThetaMaxLaw, rng: &mut R) -> f64 {
    law.sample_with_branch(rng).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn draws_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let law = ThetaMaxLaw::default();
        assert!((0..100_000).map(|_| sample_theta_max(&law, &mut rng)).all(|t| (0.0..=500.0).contains(&t)));
    }

    #[test]
    fn uniform_branch_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let law = ThetaMaxLaw::default();
        let n = 1_000_000;
        let hits = (0..n).filter(|_| law.sample_with_branch(&mut rng).1 == Branch::Uniform).count();
        assert!((hits as f64 / n as f64 - 0.75).abs() < 0.002);
    }

    #[test]
    fn mean_without_cauchy_branch() {
        // Oracle: with the Cauchy weight removed the mixture renormalizes to (6/7, 1/7),
        // so the mean is 6/7 * 100 + 1/7 * E[min(Exp(50), 500)].
        let law = ThetaMaxLaw { weights: [0.75, 0.125, 0.0], ..ThetaMaxLaw::default() };
        let capped_exp = 50.0 * (1.0 - (-10.0f64).exp());
        let expect = 6.0 / 7.0 * 100.0 + 1.0 / 7.0 * capped_exp;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_theta_max(&law, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - expect).abs() < 0.2, "{mean} vs {expect}");
    }
}
