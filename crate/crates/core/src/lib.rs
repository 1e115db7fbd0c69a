//! Empirical-Bayes estimation of Poisson means.
//!
//! Observations `X_i ~ Poi(theta_i)` with `theta_i` drawn from an unknown prior; the
//! crate provides the Bayes oracle for atomic priors, classical empirical-Bayes
//! estimators, prior generators, the least-favorable prior solver, regret accounting and
//! an explicit attention network computing the clipped Robbins estimator.

pub mod error;
pub mod estimators;
pub mod freq;
pub mod isotonic;
pub mod poisson;
pub mod prior;
pub mod priors;
pub mod regret;
pub mod robbins_net;

pub use error::{Error, Result};
pub use estimators::{Estimator, EstimatorResult};
pub use freq::FrequencyTable;
pub use poisson::{Batch, BayesTable};
pub use prior::{DiscretePrior, ThetaSource};
pub use regret::RegretReport;
