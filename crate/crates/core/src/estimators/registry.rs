//! String-keyed construction of the classical estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    erm_monotone, gold_standard, mle, npmle_estimate, robbins, robbins_clipped, robbins_smoothed, Estimator,
    FnEstimator, NpmleConfig,
};

pub const ESTIMATOR_IDS: &[&str] = &["mle", "robbins", "robbins_smoothed", "robbins_clipped", "erm", "npmle", "gs"];

/// Parameters shared by the registry constructors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorContext {
    /// Interval used by `gs`.
    pub theta_max: f64,
    /// Support cutoff of `robbins_clipped`.
    pub clip_d: u64,
    /// Clip value of `robbins_clipped`; `None` uses `theta_max`.
    pub clip_m: Option<f64>,
    /// Upper bound for `erm`; `None` uses `max(xs) + 1`.
    pub erm_cap: Option<f64>,
    pub npmle: NpmleConfig,
}

impl Default for EstimatorContext {
    fn default() -> Self {
        Self { theta_max: 50.0, clip_d: 30, clip_m: None, erm_cap: None, npmle: NpmleConfig::default() }
    }
}

pub fn build_estimator(id: &str, ctx: &EstimatorContext) -> Result<Box<dyn Estimator>> {
    let est: Box<dyn Estimator> = match id {
        "mle" => Box::new(FnEstimator::new(id, |xs: &[u64]| Ok(mle(xs)))),
        "robbins" => Box::new(FnEstimator::new(id, |xs: &[u64]| Ok(robbins(xs)))),
        "robbins_smoothed" => Box::new(FnEstimator::new(id, |xs: &[u64]| Ok(robbins_smoothed(xs)))),
        "robbins_clipped" => {
            let (d, m) = (ctx.clip_d, ctx.clip_m.unwrap_or(ctx.theta_max));
            Box::new(FnEstimator::new(id, move |xs: &[u64]| Ok(robbins_clipped(xs, d, m))))
        }
        "erm" => {
            let cap = ctx.erm_cap;
            Box::new(FnEstimator::new(id, move |xs: &[u64]| Ok(erm_monotone(xs, cap))))
        }
        "npmle" => {
            let cfg = ctx.npmle;
            cfg.validate()?;
            Box::new(FnEstimator::new(id, move |xs: &[u64]| npmle_estimate(xs, &cfg)))
        }
        "gs" => Box::new(gold_standard(ctx.theta_max)?),
        other => return Err(Error::InvalidArgument(format!("unknown estimator `{other}`"))),
    };
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_every_id() {
        let ctx = EstimatorContext { theta_max: 3.0, ..EstimatorContext::default() };
        let xs = [0, 1, 1, 2, 5];
        for id in ESTIMATOR_IDS {
            let est = build_estimator(id, &ctx).unwrap();
            assert_eq!(est.id(), *id);
            let out = est.estimate(&xs).unwrap();
            assert_eq!(out.len(), xs.len());
            assert!(out.iter().all(|v| v.is_finite() && *v >= 0.0), "{id}: {out:?}");
        }
        assert!(build_estimator("nope", &ctx).is_err());
    }
}
