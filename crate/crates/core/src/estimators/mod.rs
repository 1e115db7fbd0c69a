//! Classical empirical-Bayes baselines and the common estimator interface.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub mod erm;
pub mod gold_standard;
pub mod mle;
pub mod npmle;
pub mod registry;
pub mod robbins;

pub use erm::{erm_monotone, erm_objective};
pub use gold_standard::{gold_standard, GoldStandard};
pub use mle::mle;
pub use npmle::{npmle_estimate, npmle_fit, NpmleConfig, NpmleFit};
pub use registry::{build_estimator, EstimatorContext, ESTIMATOR_IDS};
pub use robbins::{robbins, robbins_clipped, robbins_smoothed};

/// Maps a sequence of counts to one estimate per position.
pub trait Estimator: Send + Sync {
    fn id(&self) -> &str;

    fn estimate(&self, xs: &[u64]) -> Result<Vec<f64>>;

    /// Runs [`Estimator::estimate`] and records wall time.
    fn run(&self, xs: &[u64]) -> Result<EstimatorResult> {
        let start = Instant::now();
        let estimates = self.estimate(xs)?;
        Ok(EstimatorResult { estimates, estimator_id: self.id().to_string(), wall_time: start.elapsed().as_secs_f64() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimates: Vec<f64>,
    pub estimator_id: String,
    /// Seconds.
    pub wall_time: f64,
}

/// Adapts a plain function into an [`Estimator`].
pub struct FnEstimator<F> {
    id: String,
    f: F,
}

impl<F> FnEstimator<F>
where
    F: Fn(&[u64]) -> Result<Vec<f64>> + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> Estimator for FnEstimator<F>
where
    F: Fn(&[u64]) -> Result<Vec<f64>> + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn estimate(&self, xs: &[u64]) -> Result<Vec<f64>> {
        (self.f)(xs)
    }
}
