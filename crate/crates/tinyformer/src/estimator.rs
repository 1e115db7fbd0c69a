use poisson_eb::Estimator;

use crate::model::forward;
use crate::params::ModelParams;

/// A trained model exposed through the common estimator interface.
#[derive(Debug, Clone)]
pub struct TransformerEstimator {
    id: String,
    params: ModelParams,
}

impl TransformerEstimator {
    pub fn new(id: impl Into<String>, params: ModelParams) -> Self {
        Self { id: id.into(), params }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }
}

impl Estimator for TransformerEstimator {
    fn id(&self) -> &str {
        &self.id
    }

    fn estimate(&self, xs: &[u64]) -> poisson_eb::Result<Vec<f64>> {
        forward(&self.params, xs).map_err(|e| poisson_eb::Error::Estimator { id: self.id.clone(), reason: e.to_string() })
    }
}
