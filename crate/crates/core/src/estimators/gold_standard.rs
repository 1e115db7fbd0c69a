//! Bayes rule of the least-favorable prior: minimax among rules that ignore the other samples.

use crate::error::Result;
use crate::estimators::Estimator;
use crate::poisson::BayesTable;
use crate::prior::DiscretePrior;
use crate::priors::{worst_case_prior_cached, WorstCaseConfig};

#[derive(Debug, Clone)]
pub struct GoldStandard {
    table: BayesTable,
}

impl GoldStandard {
    pub fn from_prior(prior: &DiscretePrior) -> Self {
        Self { table: BayesTable::covering(prior) }
    }

    pub fn prior(&self) -> &DiscretePrior {
        self.table.prior()
    }
}

/// Gold-standard estimator for `[0, theta_max]`, using the on-disk prior cache.
pub fn gold_standard(theta_max: f64) -> Result<GoldStandard> {
    let wc = worst_case_prior_cached(&WorstCaseConfig::new(theta_max))?;
    Ok(GoldStandard::from_prior(&wc.prior))
}

impl Estimator for GoldStandard {
    fn id(&self) -> &str {
        "gs"
    }

    fn estimate(&self, xs: &[u64]) -> Result<Vec<f64>> {
        self.table.estimate(xs)
    }
}
