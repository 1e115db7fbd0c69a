//! A hand-built one-layer attention network whose output is the clipped Robbins estimator.
//!
//! Inputs are one-hot encoded, `e_{x+1}` for `x <= d` and the zero vector above. With
//! `W_Q = I`, an upper-bidiagonal `W_K` and projections applied as `Q = Y W_Q^T`,
//! `K = Y W_K^T`, the score of query `x` against key `x` is `D / sqrt(d_k)` and against
//! key `x + 1` is `D / sqrt(d_k) + ln(x + 1)`, so softmax attention splits mass between the
//! two groups in proportion `N(x) : (x+1) N(x+1)`. The residual, `ReLU(Y + Z - 1)` and a
//! row sum recover `N(x) / (N(x) + (x+1) N(x+1))`, and `min(1/z - 1, M)` decodes it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobbinsNetSpec {
    /// Support cutoff: inputs `x >= d` map to `m`.
    pub d: usize,
    /// Clip value.
    pub m: f64,
    /// Logit scale.
    pub big_d: f64,
}

impl RobbinsNetSpec {
    /// Spec with the default logit scale `max(100, (d+1)^2)`.
    pub fn new(d: usize, m: f64) -> Result<Self> {
        Self::with_scale(d, m, 100f64.max(((d + 1) * (d + 1)) as f64))
    }

    pub fn with_scale(d: usize, m: f64, big_d: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("d must be at least 1".into()));
        }
        if !(m > 0.0) {
            return Err(Error::InvalidArgument(format!("clip value must be positive, got {m}")));
        }
        if !(big_d.is_finite() && big_d > 0.0) {
            return Err(Error::InvalidArgument(format!("logit scale must be positive, got {big_d}")));
        }
        Ok(Self { d, m, big_d })
    }
}

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    /// `y W^T`, i.e. `W y` for a row vector `y`.
    fn apply(&self, y: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j) * y[j]).sum()).collect()
    }
}

/// Fixed weights of the softmax construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RobbinsNet {
    pub spec: RobbinsNetSpec,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

/// Builds the weights for `d_k = d + 1`. Indices below are zero-based, so the entry
/// `(i, i+1)` holds `D + sqrt(d_k) ln(i + 1)`.
pub fn build_robbins_net(spec: &RobbinsNetSpec) -> RobbinsNet {
    let dk = spec.d + 1;
    let mut w_k = Matrix::zeros(dk);
    for i in 0..dk {
        w_k.set(i, i, spec.big_d);
        if i + 1 < dk {
            w_k.set(i, i + 1, spec.big_d + (dk as f64).sqrt() * ((i + 1) as f64).ln());
        }
    }
    let mut w_v = Matrix::identity(dk);
    w_v.set(dk - 1, dk - 1, 0.0);
    RobbinsNet { spec: *spec, w_q: Matrix::identity(dk), w_k, w_v }
}

/// `min(1/z - 1, m)` with `1/0 = +inf`.
pub fn decode(z: f64, m: f64) -> f64 {
    if z <= 0.0 {
        m
    } else {
        (1.0 / z - 1.0).min(m)
    }
}

impl RobbinsNet {
    fn dk(&self) -> usize {
        self.spec.d + 1
    }

    fn embed(&self, x: u64) -> Vec<f64> {
        let mut y = vec![0.0; self.dk()];
        if (x as usize) <= self.spec.d {
            y[x as usize] = 1.0;
        }
        y
    }

    /// Dense softmax attention, residual, `ReLU(Y + Z - 1)`, row sum and decoding.
    pub fn forward(&self, xs: &[u64]) -> Vec<f64> {
        let dk = self.dk();
        let y: Vec<Vec<f64>> = xs.iter().map(|&x| self.embed(x)).collect();
        let q: Vec<Vec<f64>> = y.iter().map(|r| self.w_q.apply(r)).collect();
        let k: Vec<Vec<f64>> = y.iter().map(|r| self.w_k.apply(r)).collect();
        let v: Vec<Vec<f64>> = y.iter().map(|r| self.w_v.apply(r)).collect();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut scores = vec![0.0; xs.len()];
        (0..xs.len())
            .map(|i| {
                for (s, kj) in scores.iter_mut().zip(&k) {
                    *s = scale * q[i].iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = vec![0.0; dk];
                let mut total = 0.0;
                for (s, vj) in scores.iter().zip(&v) {
                    let p = (s - mx).exp();
                    total += p;
                    for (zc, vc) in z.iter_mut().zip(vj) {
                        *zc += p * vc;
                    }
                }
                let row: f64 = z.iter().zip(&y[i]).map(|(zc, yc)| (yc + zc / total - 1.0).max(0.0)).sum();
                decode(row, self.spec.m)
            })
            .collect()
    }
}

/// Weights of the linear-attention construction on `d + 2` dimensions: `e_{x+1}` for
/// `x <= d` and a dedicated overflow coordinate for `x > d`, so every query has a
/// nonzero normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRobbinsNet {
    pub spec: RobbinsNetSpec,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

/// `K_j = e_{x_j+1} + x_j e_{x_j}` for `x_j <= d`, and `V_j = e_{x_j+1}` only for `x_j < d`.
pub fn build_linear_robbins_net(spec: &RobbinsNetSpec) -> LinearRobbinsNet {
    let dim = spec.d + 2;
    let mut w_k = Matrix::identity(dim);
    for i in 1..=spec.d {
        // The key of input i also matches the query of input i - 1, with weight i.
        w_k.set(i - 1, i, i as f64);
    }
    let mut w_v = Matrix::identity(dim);
    w_v.set(spec.d, spec.d, 0.0);
    w_v.set(spec.d + 1, spec.d + 1, 0.0);
    LinearRobbinsNet { spec: *spec, w_q: Matrix::identity(dim), w_k, w_v }
}

impl LinearRobbinsNet {
    fn embed(&self, x: u64) -> Vec<f64> {
        let dim = self.spec.d + 2;
        let mut y = vec![0.0; dim];
        y[(x as usize).min(self.spec.d + 1)] = 1.0;
        y
    }

    /// Normalized linear attention `Q_i^T (sum_j K_j V_j^T) / Q_i^T sum_j K_j`, then the same decoder.
    pub fn forward(&self, xs: &[u64]) -> Vec<f64> {
        let dim = self.spec.d + 2;
        let y: Vec<Vec<f64>> = xs.iter().map(|&x| self.embed(x)).collect();
        let mut kv = vec![0.0; dim * dim];
        let mut ksum = vec![0.0; dim];
        for yj in &y {
            let k = self.w_k.apply(yj);
            let v = self.w_v.apply(yj);
            for a in 0..dim {
                ksum[a] += k[a];
                for b in 0..dim {
                    kv[a * dim + b] += k[a] * v[b];
                }
            }
        }
        y.iter()
            .map(|yi| {
                let q = self.w_q.apply(yi);
                let den: f64 = q.iter().zip(&ksum).map(|(a, b)| a * b).sum();
                let row: f64 = (0..dim)
                    .map(|b| {
                        let num: f64 = (0..dim).map(|a| q[a] * kv[a * dim + b]).sum();
                        (yi[b] + num / den - 1.0).max(0.0)
                    })
                    .sum();
                decode(row, self.spec.m)
            })
            .collect()
    }
}

pub fn robbins_net_forward(spec: &RobbinsNetSpec, xs: &[u64]) -> Vec<f64> {
    build_robbins_net(spec).forward(xs)
}

pub fn robbins_net_linear_forward(spec: &RobbinsNetSpec, xs: &[u64]) -> Vec<f64> {
    build_linear_robbins_net(spec).forward(xs)
}

/// Two-layer ReLU network `c + sum_k a_k ReLU(x - t_k)` approximating `min(1/x - 1, m)` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderMlp {
    pub knots: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub bias: f64,
}

impl DecoderMlp {
    pub fn hidden_units(&self) -> usize {
        self.knots.len()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.bias + self.knots.iter().zip(&self.coeffs).map(|(t, a)| a * (x - t).max(0.0)).sum::<f64>()
    }
}

/// Piecewise-linear interpolant on knots spaced `eps / (1 + m)^2` from `1 / (1 + m)` to 1;
/// the target is `(1 + m)^2`-Lipschitz there, so the sup error is at most `eps`.
pub fn decoder_mlp_approx(m: f64, eps: f64) -> Result<DecoderMlp> {
    if !(eps > 0.0 && m > 0.0) {
        return Err(Error::InvalidArgument("m and eps must be positive".into()));
    }
    let f = |x: f64| decode(x, m);
    let lo = 1.0 / (1.0 + m);
    let h = eps / ((1.0 + m) * (1.0 + m));
    let pieces = ((1.0 - lo) / h).ceil().max(1.0) as usize;
    let knots: Vec<f64> = (0..=pieces).map(|i| lo + (1.0 - lo) * i as f64 / pieces as f64).collect();
    let slopes: Vec<f64> = knots.windows(2).map(|w| (f(w[1]) - f(w[0])) / (w[1] - w[0])).collect();
    let mut coeffs = Vec::with_capacity(pieces);
    let mut prev = 0.0;
    for s in &slopes {
        coeffs.push(s - prev);
        prev = *s;
    }
    Ok(DecoderMlp { knots: knots[..pieces].to_vec(), coeffs, bias: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::robbins_clipped;

    #[test]
    fn weights_for_d2() {
        let spec = RobbinsNetSpec::with_scale(2, 5.0, 100.0).unwrap();
        let net = build_robbins_net(&spec);
        assert_eq!(net.w_k.dim, 3);
        for i in 0..3 {
            assert_eq!(net.w_k.get(i, i), 100.0);
        }
        assert_eq!(net.w_k.get(0, 1), 100.0 + 3f64.sqrt() * 1f64.ln());
        assert_eq!(net.w_k.get(1, 2), 100.0 + 3f64.sqrt() * 2f64.ln());
        assert_eq!(net.w_k.get(1, 0), 0.0);
        assert_eq!(net.w_k.get(0, 2), 0.0);
        assert_eq!(net.w_v.get(2, 2), 0.0);
        assert_eq!(net.w_v.get(1, 1), 1.0);
        assert!(net.w_k.data.iter().all(|v| v.is_finite()));
        assert_eq!(net, build_robbins_net(&spec));
    }

    #[test]
    fn default_scale() {
        assert_eq!(RobbinsNetSpec::new(5, 1.0).unwrap().big_d, 100.0);
        assert_eq!(RobbinsNetSpec::new(30, 1.0).unwrap().big_d, 961.0);
        assert!(RobbinsNetSpec::new(0, 1.0).is_err());
        assert!(RobbinsNetSpec::new(3, 0.0).is_err());
    }

    #[test]
    fn small_example_matches_clipped_robbins() {
        let spec = RobbinsNetSpec::with_scale(5, 10.0, 100.0).unwrap();
        let xs = [0, 0, 1, 2];
        let expect = [0.5, 0.5, 2.0, 0.0];
        for (a, b) in robbins_net_forward(&spec, &xs).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        for (a, b) in robbins_net_linear_forward(&spec, &xs).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn overflow_inputs_decode_to_clip() {
        let spec = RobbinsNetSpec::with_scale(3, 7.0, 100.0).unwrap();
        let xs = [3, 4, 9, 3];
        assert_eq!(robbins_net_forward(&spec, &xs), vec![7.0; 4]);
        assert_eq!(robbins_net_linear_forward(&spec, &xs), vec![7.0; 4]);
    }

    #[test]
    fn boundary_below_cutoff_keeps_successor_count() {
        // x = d - 1 must see N(d) even though inputs at d decode to the clip value.
        let spec = RobbinsNetSpec::with_scale(3, 50.0, 400.0).unwrap();
        let xs = [2, 2, 3, 3, 3, 5];
        let want = robbins_clipped(&xs, 3, 50.0);
        for (a, b) in robbins_net_linear_forward(&spec, &xs).iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        for (a, b) in robbins_net_forward(&spec, &xs).iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn decoder_approximation() {
        let net = decoder_mlp_approx(5.0, 0.1).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=100_000 {
            let x = i as f64 / 100_000.0;
            worst = worst.max((net.eval(x) - decode(x, 5.0)).abs());
        }
        assert!(worst <= 0.1, "{worst}");
        assert!((net.eval(1.0) - 0.0).abs() <= 0.1);
        assert_eq!(net.eval(0.05), 5.0);
        let units: Vec<usize> = [0.1, 0.05, 0.025].iter().map(|&e| decoder_mlp_approx(5.0, e).unwrap().hidden_units()).collect();
        assert!(units[1] <= 2 * units[0] + 1 && units[2] <= 2 * units[1] + 1, "{units:?}");
    }
}
