//! Central finite-difference verification of [`loss_and_grad`].

use rand::Rng;

use crate::error::Result;
use crate::model::loss_and_grad;
use crate::params::ModelParams;

/// Denominator floor of the relative error, so vanishing gradients are judged absolutely.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
}

fn set_coord(params: &mut ModelParams, tensor: usize, index: usize, value: f64) {
    let mut views = params.tensors_mut();
    *views[tensor].iter_mut().nth(index).expect("index in range") = value;
}

/// Compares analytic and central-difference derivatives on `coords` random entries of
/// every tensor; the error is `|a - f| / max(|a|, |f|, REL_FLOOR)`.
pub fn gradient_check<R: Rng + ?Sized>(
    params: &ModelParams,
    xs: &[u64],
    thetas: &[f64],
    coords: usize,
    step: f64,
    rng: &mut R,
) -> Result<Vec<TensorCheck>> {
    let (_, grad) = loss_and_grad(params, xs, thetas)?;
    let analytic: Vec<(String, Vec<f64>)> =
        grad.tensors().into_iter().map(|(n, t)| (n, t.iter().copied().collect())).collect();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(analytic.len());
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let picks: Vec<usize> = if a.len() <= coords {
            (0..a.len()).collect()
        } else {
            (0..coords).map(|_| rng.random_range(0..a.len())).collect()
        };
        let mut worst: f64 = 0.0;
        for &i in &picks {
            let base = params.tensors()[ti].1.iter().nth(i).copied().expect("index in range");
            set_coord(&mut probe, ti, i, base + step);
            let (up, _) = loss_and_grad(&probe, xs, thetas)?;
            set_coord(&mut probe, ti, i, base - step);
            let (down, _) = loss_and_grad(&probe, xs, thetas)?;
            set_coord(&mut probe, ti, i, base);
            let fd = (up - down) / (2.0 * step);
            let err = (a[i] - fd).abs() / a[i].abs().max(fd.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
        out.push(TensorCheck { name: name.clone(), coords: picks.len(), max_rel_err: worst });
    }
    Ok(out)
}
