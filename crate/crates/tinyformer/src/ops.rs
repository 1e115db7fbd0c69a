//! Row-wise kernels shared by the encoder and probe heads.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::params::LayerNorm;

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Normalized rows and reciprocal standard deviations saved for the backward pass.
pub struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub fn layer_norm(x: &Array2<f64>, ln: &LayerNorm) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rr = *r;
        row.mapv_inplace(|v| v * rr);
    }
    let y = &xhat * &ln.gamma + &ln.beta;
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_backward(dy: &Array2<f64>, cache: &LnCache, ln: &LayerNorm, grad: &mut LayerNorm) -> Array2<f64> {
    grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.beta += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * &ln.gamma;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.rstd) {
        let mean = row.sum() / d;
        let proj = row.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
        Zip::from(&mut row).and(&xh).for_each(|g, &h| *g = r * (*g - mean - h * proj));
    }
    dx
}

/// Tanh approximation of GELU.
pub fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044_715 * u * u * u)).tanh())
}

pub fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044_715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044_715 * u * u)
}

