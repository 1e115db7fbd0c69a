//! Forward pass, reverse-mode gradients and the MSE training loss.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::config::{AttentionKind, ModelConfig};
use crate::error::{Error, Result};
use crate::ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, LnCache};
use crate::params::{Block, Linear, ModelParams, INPUT_FEATURES};

/// Query rows processed at once by the inference softmax path.
const QUERY_CHUNK: usize = 256;

/// Input features `(x / input_scale, ln(1 + x))`, one row per position.
pub fn features(xs: &[u64], cfg: &ModelConfig) -> Array2<f64> {
    let mut f = Array2::zeros((xs.len(), INPUT_FEATURES));
    for (mut row, &x) in f.rows_mut().into_iter().zip(xs) {
        let x = x as f64;
        row[0] = x / cfg.input_scale;
        row[1] = x.ln_1p();
    }
    f
}

fn linear(x: &ArrayView2<f64>, l: &Linear) -> Array2<f64> {
    x.dot(&l.w) + &l.b
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

fn accumulate_linear(grad: &mut Linear, input: &ArrayView2<f64>, dout: &Array2<f64>) {
    grad.w += &input.t().dot(dout);
    grad.b += &dout.sum_axis(Axis(0));
}

/// Multi-head attention for inference; softmax rows are processed in chunks.
fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, cfg: &ModelConfig) -> Array2<f64> {
    let n = q.nrows();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros(q.raw_dim());
    for h in 0..cfg.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
        match cfg.attention {
            AttentionKind::Softmax => {
                for start in (0..n).step_by(QUERY_CHUNK) {
                    let end = (start + QUERY_CHUNK).min(n);
                    let mut sc = qh.slice(s![start..end, ..]).dot(&kh.t());
                    sc *= scale;
                    softmax_rows(&mut sc);
                    out.slice_mut(s![start..end, h * dh..(h + 1) * dh]).assign(&sc.dot(&vh));
                }
            }
            AttentionKind::LinearIdentity => {
                let m = kh.t().dot(&vh);
                out.slice_mut(cols).assign(&(qh.dot(&m) / n as f64));
            }
        }
    }
    out
}

/// Per-head matrices kept for the backward pass: attention weights for softmax,
/// `K^T V` for linear attention.
fn attention_train(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    cfg: &ModelConfig,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let n = q.nrows();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros(q.raw_dim());
    let mut saved = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
        match cfg.attention {
            AttentionKind::Softmax => {
                let mut p = qh.dot(&kh.t());
                p *= scale;
                softmax_rows(&mut p);
                out.slice_mut(cols).assign(&p.dot(&vh));
                saved.push(p);
            }
            AttentionKind::LinearIdentity => {
                let m = kh.t().dot(&vh);
                out.slice_mut(cols).assign(&(qh.dot(&m) / n as f64));
                saved.push(m);
            }
        }
    }
    (out, saved)
}

fn attention_backward(
    dout: &Array2<f64>,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    saved: &[Array2<f64>],
    cfg: &ModelConfig,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let n = q.nrows() as f64;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (h, m) in saved.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
        let doh = dout.slice(cols);
        match cfg.attention {
            AttentionKind::Softmax => {
                let p = m;
                dv.slice_mut(cols).assign(&p.t().dot(&doh));
                let mut ds = doh.dot(&vh.t());
                for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot = drow.iter().zip(prow).map(|(a, b)| a * b).sum::<f64>();
                    Zip::from(&mut drow).and(&prow).for_each(|g, &pv| *g = pv * (*g - dot));
                }
                ds *= scale;
                dq.slice_mut(cols).assign(&ds.dot(&kh));
                dk.slice_mut(cols).assign(&ds.t().dot(&qh));
            }
            AttentionKind::LinearIdentity => {
                dq.slice_mut(cols).assign(&(doh.dot(&m.t()) / n));
                let dm = qh.t().dot(&doh) / n;
                dk.slice_mut(cols).assign(&vh.dot(&dm.t()));
                dv.slice_mut(cols).assign(&kh.dot(&dm));
            }
        }
    }
    (dq, dk, dv)
}

fn ensure_finite(h: &Array2<f64>, layer: usize) -> Result<()> {
    if h.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer })
    }
}

fn block_forward(h: &mut Array2<f64>, block: &Block, cfg: &ModelConfig) {
    let (a, _) = layer_norm(h, &block.ln1);
    let av = a.view();
    let (q, k, v) = (linear(&av, &block.q), linear(&av, &block.k), linear(&av, &block.v));
    let att = attention(&q, &k, &v, cfg);
    *h += &linear(&att.view(), &block.o);
    let (b, _) = layer_norm(h, &block.ln2);
    let mut u = linear(&b.view(), &block.ff1);
    u.mapv_inplace(gelu);
    *h += &linear(&u.view(), &block.ff2);
}

fn decode(h: &Array2<f64>, params: &ModelParams) -> (Vec<f64>, LnCache, Array2<f64>) {
    let (z, cache) = layer_norm(h, &params.ln_f);
    let s = params.config.output_scale;
    let y = linear(&z.view(), &params.head).column(0).iter().map(|v| s * v).collect();
    (y, cache, z)
}

/// One estimate per position.
pub fn forward(params: &ModelParams, xs: &[u64]) -> Result<Vec<f64>> {
    forward_capture(params, xs, &[]).map(|(y, _)| y)
}

/// Estimates plus the residual stream after each requested block (1-based layer
/// indices; layer 0 is the embedding output).
pub fn forward_capture(params: &ModelParams, xs: &[u64], capture: &[usize]) -> Result<(Vec<f64>, Vec<Array2<f64>>)> {
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cfg = &params.config;
    if let Some(&bad) = capture.iter().find(|&&l| l > cfg.layers) {
        return Err(Error::InvalidConfig(format!("capture layer {bad} beyond depth {}", cfg.layers)));
    }
    let mut h = linear(&features(xs, cfg).view(), &params.embed);
    let mut captured = vec![None; capture.len()];
    let mut record = |layer: usize, h: &Array2<f64>| {
        for (slot, &want) in captured.iter_mut().zip(capture) {
            if want == layer {
                *slot = Some(h.clone());
            }
        }
    };
    record(0, &h);
    for layer in 0..cfg.layers {
        block_forward(&mut h, &params.groups[cfg.group_of(layer)], cfg);
        ensure_finite(&h, layer + 1)?;
        record(layer + 1, &h);
    }
    let (y, _, _) = decode(&h, params);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { layer: cfg.layers + 1 });
    }
    Ok((y, captured.into_iter().map(|c| c.expect("every requested layer recorded")).collect()))
}

struct LayerTape {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    saved: Vec<Array2<f64>>,
    att: Array2<f64>,
    ln2: LnCache,
    b: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Mean squared error of the estimates on one sequence and its gradient.
pub fn loss_and_grad(params: &ModelParams, xs: &[u64], thetas: &[f64]) -> Result<(f64, ModelParams)> {
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if xs.len() != thetas.len() {
        return Err(Error::InvalidConfig(format!("{} inputs but {} targets", xs.len(), thetas.len())));
    }
    let cfg = &params.config;
    let feats = features(xs, cfg);
    let mut h = linear(&feats.view(), &params.embed);
    let mut tapes = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        let block = &params.groups[cfg.group_of(layer)];
        let (a, ln1) = layer_norm(&h, &block.ln1);
        let av = a.view();
        let (q, k, v) = (linear(&av, &block.q), linear(&av, &block.k), linear(&av, &block.v));
        let (att, saved) = attention_train(&q, &k, &v, cfg);
        h += &linear(&att.view(), &block.o);
        let (b, ln2) = layer_norm(&h, &block.ln2);
        let u = linear(&b.view(), &block.ff1);
        let g = u.mapv(gelu);
        h += &linear(&g.view(), &block.ff2);
        ensure_finite(&h, layer + 1)?;
        tapes.push(LayerTape { ln1, a, q, k, v, saved, att, ln2, b, u, g });
    }
    let (y, lnf_cache, z) = decode(&h, params);
    let n = xs.len() as f64;
    let loss = y.iter().zip(thetas).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite { layer: cfg.layers + 1 });
    }

    let mut grad = params.zeros_like();
    let scale = cfg.output_scale;
    let dy = Array2::from_shape_fn((xs.len(), 1), |(i, _)| 2.0 * (y[i] - thetas[i]) / n * scale);
    accumulate_linear(&mut grad.head, &z.view(), &dy);
    let dz = dy.dot(&params.head.w.t());
    let mut dh = layer_norm_backward(&dz, &lnf_cache, &params.ln_f, &mut grad.ln_f);

    for layer in (0..cfg.layers).rev() {
        let gi = cfg.group_of(layer);
        let block = &params.groups[gi];
        let gblock = &mut grad.groups[gi];
        let t = &tapes[layer];
        // Feed-forward branch.
        accumulate_linear(&mut gblock.ff2, &t.g.view(), &dh);
        let mut du = dh.dot(&block.ff2.w.t());
        Zip::from(&mut du).and(&t.u).for_each(|d, &u| *d *= gelu_grad(u));
        accumulate_linear(&mut gblock.ff1, &t.b.view(), &du);
        let db = du.dot(&block.ff1.w.t());
        dh += &layer_norm_backward(&db, &t.ln2, &block.ln2, &mut gblock.ln2);
        // Attention branch.
        accumulate_linear(&mut gblock.o, &t.att.view(), &dh);
        let datt = dh.dot(&block.o.w.t());
        let (dq, dk, dv) = attention_backward(&datt, &t.q, &t.k, &t.v, &t.saved, cfg);
        let av = t.a.view();
        accumulate_linear(&mut gblock.q, &av, &dq);
        accumulate_linear(&mut gblock.k, &av, &dk);
        accumulate_linear(&mut gblock.v, &av, &dv);
        let da = dq.dot(&block.q.w.t()) + dk.dot(&block.k.w.t()) + dv.dot(&block.v.w.t());
        dh += &layer_norm_backward(&da, &t.ln1, &block.ln1, &mut gblock.ln1);
    }
    accumulate_linear(&mut grad.embed, &feats.view(), &dh);
    grad.check_finite()?;
    Ok((loss, grad))
}
