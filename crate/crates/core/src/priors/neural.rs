//! Random pushforward priors `u ~ Unif[0,1] -> Sigmoid(10 W2 act(W1 u))`, mixed over components.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::prior::{DiscretePrior, ThetaSource};

pub const COMPONENTS: usize = 4;
pub const HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Gelu,
    Relu,
    Selu,
    Celu,
    Silu,
    Tanh,
    TanhShrink,
}

impl Activation {
    pub const ALL: [Activation; 7] = [
        Activation::Gelu,
        Activation::Relu,
        Activation::Selu,
        Activation::Celu,
        Activation::Silu,
        Activation::Tanh,
        Activation::TanhShrink,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2)),
            Activation::Relu => x.max(0.0),
            Activation::Selu => {
                const ALPHA: f64 = 1.673_263_242_354_377_3;
                const SCALE: f64 = 1.050_700_987_355_480_5;
                SCALE * if x > 0.0 { x } else { ALPHA * x.exp_m1() }
            }
            Activation::Celu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::TanhShrink => x - x.tanh(),
        }
    }
}

/// One pushforward map with scalar input and output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub activation: Activation,
}

impl Component {
    pub fn map(&self, u: f64) -> f64 {
        let z: f64 = self.w1.iter().zip(&self.w2).map(|(a, b)| b * self.activation.apply(a * u)).sum();
        sigmoid(10.0 * z)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralPriorSpec {
    pub components: Vec<Component>,
    pub mixture: Vec<f64>,
}

/// Draws a spec: standard-normal weights, uniform activation tags, Dirichlet(1) mixture weights.
pub fn sample_neural_prior<R: Rng + ?Sized>(rng: &mut R) -> NeuralPriorSpec {
    let components = (0..COMPONENTS)
        .map(|_| Component {
            w1: (0..HIDDEN).map(|_| rng.sample(StandardNormal)).collect(),
            w2: (0..HIDDEN).map(|_| rng.sample(StandardNormal)).collect(),
            activation: Activation::ALL[rng.random_range(0..Activation::ALL.len())],
        })
        .collect();
    let gamma = Gamma::new(1.0, 1.0).expect("valid gamma");
    let raw: Vec<f64> = (0..COMPONENTS).map(|_| gamma.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    NeuralPriorSpec { components, mixture: raw.iter().map(|v| v / total).collect() }
}

impl NeuralPriorSpec {
    pub fn sample_base<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components.len() - 1;
        for (i, w) in self.mixture.iter().enumerate() {
            acc += w;
            if r < acc {
                k = i;
                break;
            }
        }
        self.components[k].map(rng.random())
    }

    /// Discretizes `theta_max * theta_base` by averaging consecutive order statistics of
    /// `draws` samples into `atoms` equal-weight atoms; coincident atoms are merged.
    pub fn discretize<R: Rng + ?Sized>(&self, theta_max: f64, draws: usize, atoms: usize, rng: &mut R) -> Result<DiscretePrior> {
        let mut v = sample_theta_base_batch(self, draws, rng);
        v.sort_by(f64::total_cmp);
        let per = draws.div_ceil(atoms.max(1));
        let pairs = v
            .chunks(per)
            .map(|c| ((c.iter().sum::<f64>() / c.len() as f64 * theta_max).clamp(0.0, theta_max), c.len() as f64))
            .collect();
        DiscretePrior::from_pairs(pairs, theta_max)
    }
}

/// `n` i.i.d. draws in `[0, 1]` from the component mixture.
pub fn sample_theta_base_batch<R: Rng + ?Sized>(spec: &NeuralPriorSpec, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| spec.sample_base(rng)).collect()
}

/// A neural prior scaled to `[0, theta_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledNeural {
    pub spec: NeuralPriorSpec,
    pub theta_max: f64,
}

impl ThetaSource for ScaledNeural {
    fn sample_thetas(&self, n: usize, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        (0..n).map(|_| self.spec.sample_base(rng) * self.theta_max).collect()
    }
}
