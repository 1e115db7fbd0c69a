//! Prior families used for training and evaluation.

pub mod dirichlet;
pub mod multinomial;
pub mod neural;
pub mod theta_max;
pub mod worst_case;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dirichlet::{sample_dirichlet_batch, DirichletProcessSpec};
pub use multinomial::multinomial_grid_prior;
pub use neural::{sample_neural_prior, sample_theta_base_batch, Activation, NeuralPriorSpec, ScaledNeural};
pub use theta_max::{sample_theta_max, ThetaMaxLaw};
pub use worst_case::{worst_case_prior, worst_case_prior_cached, WorstCaseConfig, WorstCasePrior};

use crate::poisson::{sample_poisson, Batch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Neural,
    Dirichlet,
}

/// Prior-on-priors used for training: each batch flips a coin between a fresh neural
/// prior and a Dirichlet-process batch, then scales by a random `theta_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingPriorMix {
    /// Probability of the neural branch.
    pub neural_weight: f64,
    pub dirichlet: DirichletProcessSpec,
    pub theta_max: ThetaMaxLaw,
}

impl Default for TrainingPriorMix {
    fn default() -> Self {
        Self { neural_weight: 0.5, dirichlet: DirichletProcessSpec::default(), theta_max: ThetaMaxLaw::default() }
    }
}

/// One training batch with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDraw {
    pub batch: Batch,
    pub kind: PriorKind,
    pub theta_max: f64,
}

impl TrainingPriorMix {
    pub fn validate(&self) -> crate::Result<()> {
        if !(0.0..=1.0).contains(&self.neural_weight) {
            return Err(crate::Error::InvalidArgument(format!("neural_weight {} outside [0, 1]", self.neural_weight)));
        }
        DirichletProcessSpec::new(self.dirichlet.alpha)?;
        self.theta_max.validate()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> TrainingDraw {
        let kind = if rng.random::<f64>() < self.neural_weight { PriorKind::Neural } else { PriorKind::Dirichlet };
        let theta_max = sample_theta_max(&self.theta_max, rng);
        let base = match kind {
            PriorKind::Neural => {
                let spec = sample_neural_prior(rng);
                sample_theta_base_batch(&spec, n, rng)
            }
            PriorKind::Dirichlet => sample_dirichlet_batch(&self.dirichlet, n, rng),
        };
        let thetas: Vec<f64> = base.iter().map(|b| b * theta_max).collect();
        let xs = thetas.iter().map(|&t| sample_poisson(t, rng)).collect();
        let prior_id = match kind {
            PriorKind::Neural => "neural",
            PriorKind::Dirichlet => "dirichlet",
        };
        TrainingDraw { batch: Batch { xs, thetas, prior_id: prior_id.into() }, kind, theta_max }
    }
}
