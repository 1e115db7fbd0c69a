use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    /// Row-normalized `softmax(Q K^T / sqrt(d_head)) V`.
    Softmax,
    /// `(1/n) Q (K^T V)` with identity feature map and no normalizer.
    LinearIdentity,
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Softmax => "softmax",
            Self::LinearIdentity => "linear-identity",
        }
    }
}

/// Architecture of the encoder. Layers `0..N/2` share weight group A and
/// layers `N/2..N` share group B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub attention: AttentionKind,
    /// Divisor of the linear input feature `x / input_scale`.
    pub input_scale: f64,
    /// Multiplier applied to the decoder output.
    pub output_scale: f64,
    /// Seed of the parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            d_model: 32,
            heads: 4,
            ffn_width: 128,
            attention: AttentionKind::Softmax,
            input_scale: 64.0,
            output_scale: 64.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layers == 0 || self.layers % 2 != 0 {
            return bad(format!("layers must be even and positive, got {}", self.layers));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.ffn_width == 0 {
            return bad("ffn_width must be positive".into());
        }
        for (name, v) in [("input_scale", self.input_scale), ("output_scale", self.output_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Weight group used by `layer` (0 for A, 1 for B).
    pub fn group_of(&self, layer: usize) -> usize {
        usize::from(layer >= self.layers / 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_odd_layers_and_bad_heads() {
        let odd = ModelConfig { layers: 3, ..ModelConfig::default() };
        assert!(odd.validate().is_err());
        let heads = ModelConfig { heads: 5, ..ModelConfig::default() };
        assert!(heads.validate().is_err());
    }

    #[test]
    fn groups_split_evenly() {
        let c = ModelConfig { layers: 4, ..ModelConfig::default() };
        assert_eq!((0..4).map(|l| c.group_of(l)).collect::<Vec<_>>(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn attention_tags_round_trip() {
        let s = serde_json::to_string(&AttentionKind::LinearIdentity).unwrap();
        assert_eq!(s, "\"linear-identity\"");
        assert!(serde_json::from_str::<AttentionKind>("\"cosine\"").is_err());
    }
}
