use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// `y = x w + b` with `w` of shape `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { w: Array2::zeros((input, output)), b: Array1::zeros(output) }
    }

    pub fn random<R: rand::Rng + ?Sized>(input: usize, output: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("positive std");
        Self { w: Array2::from_shape_fn((input, output), |_| normal.sample(rng)), b: Array1::zeros(output) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn identity(d: usize) -> Self {
        Self { gamma: Array1::ones(d), beta: Array1::zeros(d) }
    }

    pub fn zeros(d: usize) -> Self {
        Self { gamma: Array1::zeros(d), beta: Array1::zeros(d) }
    }
}

/// Pre-norm block: `h += attn(ln1(h)) W_o`, then `h += ff2(gelu(ff1(ln2(h))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

/// Parameters of the whole model. The same struct holds gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Affine map from the two input features to `d_model`.
    pub embed: Linear,
    /// Weight groups A and B.
    pub groups: [Block; 2],
    pub ln_f: LayerNorm,
    /// Linear decoder `d_model -> 1`.
    pub head: Linear,
}

/// Input features of a count: `(x / input_scale, ln(1 + x))`.
pub const INPUT_FEATURES: usize = 2;

impl ModelParams {
    /// Random initialization from `config.seed`; the decoder starts at zero.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let f = config.ffn_width;
        let residual = 1.0 / (2.0 * config.layers as f64).sqrt();
        let embed = Linear::random(INPUT_FEATURES, d, 1.0, &mut rng);
        let block = |rng: &mut ChaCha8Rng| Block {
            ln1: LayerNorm::identity(d),
            q: Linear::random(d, d, (1.0 / d as f64).sqrt(), rng),
            k: Linear::random(d, d, (1.0 / d as f64).sqrt(), rng),
            v: Linear::random(d, d, (1.0 / d as f64).sqrt(), rng),
            o: Linear::random(d, d, residual * (1.0 / d as f64).sqrt(), rng),
            ln2: LayerNorm::identity(d),
            ff1: Linear::random(d, f, (1.0 / d as f64).sqrt(), rng),
            ff2: Linear::random(f, d, residual * (1.0 / f as f64).sqrt(), rng),
        };
        let groups = [block(&mut rng), block(&mut rng)];
        Ok(Self { config: config.clone(), embed, groups, ln_f: LayerNorm::identity(d), head: Linear::zeros(d, 1) })
    }

    /// All-zero tensors with the shapes of `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let f = config.ffn_width;
        let block = || Block {
            ln1: LayerNorm::zeros(d),
            q: Linear::zeros(d, d),
            k: Linear::zeros(d, d),
            v: Linear::zeros(d, d),
            o: Linear::zeros(d, d),
            ln2: LayerNorm::zeros(d),
            ff1: Linear::zeros(d, f),
            ff2: Linear::zeros(f, d),
        };
        Self {
            config: config.clone(),
            embed: Linear::zeros(INPUT_FEATURES, d),
            groups: [block(), block()],
            ln_f: LayerNorm::zeros(d),
            head: Linear::zeros(d, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Tensors in checkpoint order with stable dotted names.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        fn lin<'a>(out: &mut Vec<(String, ArrayViewD<'a, f64>)>, name: &str, l: &'a Linear) {
            out.push((format!("{name}.w"), l.w.view().into_dyn()));
            out.push((format!("{name}.b"), l.b.view().into_dyn()));
        }
        let mut out = Vec::new();
        lin(&mut out, "embed", &self.embed);
        for (g, block) in self.groups.iter().enumerate() {
            let p = if g == 0 { "group_a" } else { "group_b" };
            out.push((format!("{p}.ln1.gamma"), block.ln1.gamma.view().into_dyn()));
            out.push((format!("{p}.ln1.beta"), block.ln1.beta.view().into_dyn()));
            lin(&mut out, &format!("{p}.q"), &block.q);
            lin(&mut out, &format!("{p}.k"), &block.k);
            lin(&mut out, &format!("{p}.v"), &block.v);
            lin(&mut out, &format!("{p}.o"), &block.o);
            out.push((format!("{p}.ln2.gamma"), block.ln2.gamma.view().into_dyn()));
            out.push((format!("{p}.ln2.beta"), block.ln2.beta.view().into_dyn()));
            lin(&mut out, &format!("{p}.ff1"), &block.ff1);
            lin(&mut out, &format!("{p}.ff2"), &block.ff2);
        }
        out.push(("ln_f.gamma".into(), self.ln_f.gamma.view().into_dyn()));
        out.push(("ln_f.beta".into(), self.ln_f.beta.view().into_dyn()));
        lin(&mut out, "head", &self.head);
        out
    }

    /// Mutable views in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        fn lin<'a>(out: &mut Vec<ArrayViewMutD<'a, f64>>, l: &'a mut Linear) {
            out.push(l.w.view_mut().into_dyn());
            out.push(l.b.view_mut().into_dyn());
        }
        let mut out = Vec::new();
        lin(&mut out, &mut self.embed);
        for block in self.groups.iter_mut() {
            out.push(block.ln1.gamma.view_mut().into_dyn());
            out.push(block.ln1.beta.view_mut().into_dyn());
            lin(&mut out, &mut block.q);
            lin(&mut out, &mut block.k);
            lin(&mut out, &mut block.v);
            lin(&mut out, &mut block.o);
            out.push(block.ln2.gamma.view_mut().into_dyn());
            out.push(block.ln2.beta.view_mut().into_dyn());
            lin(&mut out, &mut block.ff1);
            lin(&mut out, &mut block.ff2);
        }
        out.push(self.ln_f.gamma.view_mut().into_dyn());
        out.push(self.ln_f.beta.view_mut().into_dyn());
        lin(&mut out, &mut self.head);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        let src = other.tensors();
        for (mut dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.scaled_add(scale, &s);
        }
    }

    /// Errors on the first tensor holding a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { path: name });
            }
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a digest of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.tensors() {
            for v in t.iter() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_finite() {
        let cfg = ModelConfig::default();
        let a = ModelParams::init(&cfg).unwrap();
        let b = ModelParams::init(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.check_finite().is_ok());
        let c = ModelParams::init(&ModelConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn tensor_views_align() {
        let mut p = ModelParams::init(&ModelConfig::default()).unwrap();
        let shapes: Vec<Vec<usize>> = p.tensors().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let mut_shapes: Vec<Vec<usize>> = p.tensors_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, mut_shapes);
        let names: std::collections::HashSet<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), shapes.len());
    }

    #[test]
    fn add_scaled_accumulates() {
        let cfg = ModelConfig { layers: 2, d_model: 4, heads: 2, ffn_width: 8, ..ModelConfig::default() };
        let p = ModelParams::init(&cfg).unwrap();
        let mut acc = p.zeros_like();
        acc.add_scaled(&p, 2.0);
        acc.add_scaled(&p, -1.0);
        assert_eq!(acc, p);
    }
}
