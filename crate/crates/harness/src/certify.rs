//! Certification of the constructed Robbins networks against the clipped Robbins rule.

use poisson_eb::estimators::robbins_clipped;
use poisson_eb::robbins_net::{robbins_net_forward, robbins_net_linear_forward, RobbinsNetSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    pub d: usize,
    pub m: f64,
    pub big_d: f64,
    pub batches: usize,
    pub max_n: usize,
    /// Set by the caller; not part of the config schema.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { d: 30, m: 50.0, big_d: 100.0, batches: 1000, max_n: 512, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub config: CertifyConfig,
    pub softmax_max_dev: f64,
    pub linear_max_dev: f64,
    /// Batch index and length attaining the softmax maximum.
    pub worst_batch: usize,
    pub worst_n: usize,
    pub seconds: f64,
}

/// Random batches: length uniform on `1..=max_n`, support drawn as a random subset of
/// `0..=d` with random cell frequencies.
pub fn random_batch(rng: &mut ChaCha8Rng, d: usize, max_n: usize) -> Vec<u64> {
    let n = rng.random_range(1..=max_n);
    let k = rng.random_range(1..=d + 1);
    let mut support: Vec<u64> = (0..=d as u64).collect();
    for i in (1..support.len()).rev() {
        support.swap(i, rng.random_range(0..=i));
    }
    support.truncate(k);
    let weights: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    (0..n)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            for (s, w) in support.iter().zip(&weights) {
                if u < *w {
                    return *s;
                }
                u -= w;
            }
            support[k - 1]
        })
        .collect()
}

pub fn certify_robbins(cfg: &CertifyConfig) -> Result<CertifyReport> {
    let start = std::time::Instant::now();
    let spec = RobbinsNetSpec::with_scale(cfg.d, cfg.m, cfg.big_d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut soft, mut lin, mut worst_batch, mut worst_n) = (0.0f64, 0.0f64, 0, 0);
    for b in 0..cfg.batches {
        let xs = random_batch(&mut rng, cfg.d, cfg.max_n);
        let want = robbins_clipped(&xs, cfg.d as u64, cfg.m);
        let dev = |got: Vec<f64>| got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let s = dev(robbins_net_forward(&spec, &xs));
        if s > soft {
            soft = s;
            worst_batch = b;
            worst_n = xs.len();
        }
        lin = lin.max(dev(robbins_net_linear_forward(&spec, &xs)));
    }
    Ok(CertifyReport {
        config: *cfg,
        softmax_max_dev: soft,
        linear_max_dev: lin,
        worst_batch,
        worst_n,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_respect_support_and_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let xs = random_batch(&mut rng, 5, 40);
            assert!(!xs.is_empty() && xs.len() <= 40);
            assert!(xs.iter().all(|&x| x <= 5));
        }
    }

    #[test]
    fn large_scale_certifies_tightly() {
        let cfg = CertifyConfig { d: 6, m: 10.0, big_d: 400.0, batches: 50, max_n: 64, seed: 3 };
        let rep = certify_robbins(&cfg).unwrap();
        assert!(rep.softmax_max_dev < 1e-9, "{}", rep.softmax_max_dev);
        assert!(rep.linear_max_dev < 1e-9);
    }
}
