use serde::{Deserialize, Serialize};

use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: AdamConfig) -> Self {
        Self { cfg, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let grads = grad.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((mut p, (_, g)), mut m), mut v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            ndarray::Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let cfg = ModelConfig { layers: 2, d_model: 4, heads: 1, ffn_width: 4, ..ModelConfig::default() };
        let mut p = ModelParams::zeros(&cfg);
        let mut g = p.zeros_like();
        g.head.b[0] = 3.0;
        g.embed.w[[0, 0]] = -0.5;
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.step(&mut p, &g, 0.01);
        assert!((p.head.b[0] + 0.01).abs() < 1e-9);
        assert!((p.embed.w[[0, 0]] - 0.01).abs() < 1e-9);
        assert_eq!(p.head.w[[0, 0]], 0.0);
        assert_eq!(adam.steps(), 1);
    }
}
