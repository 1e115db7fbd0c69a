//! Linear probes on frozen transformer activations.

use std::io::Write;

use ndarray::{Array1, Array2, Axis};
use poisson_eb::estimators::{npmle_fit, NpmleConfig};
use poisson_eb::freq::FrequencyTable;
use poisson_eb::poisson::{mixture_logpmf, sample_batch};
use poisson_eb::prior::DiscretePrior;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tinyformer::adam::AdamConfig;
use tinyformer::ops::{gelu, gelu_grad, layer_norm, layer_norm_backward};
use tinyformer::params::{LayerNorm, Linear};
use tinyformer::{forward_capture, ModelParams};

use crate::error::{Error, Result};
use crate::synthetic::{sample_family_prior, ExperimentSpec, PriorFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    /// `N(x) / n`, or the raw count when `raw_frequency` is set.
    Frequency,
    /// Mixture density `f(x)` of the NPMLE fitted to the same sequence.
    NpmleDensity,
    /// The input count itself.
    #[serde(rename = "x")]
    Input,
    /// Mass of the generating prior at the token's latent mean.
    AtomPmf,
}

impl ProbeTarget {
    pub const ALL: [ProbeTarget; 4] = [Self::Frequency, Self::NpmleDensity, Self::Input, Self::AtomPmf];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Frequency => "frequency",
            Self::NpmleDensity => "npmle_density",
            Self::Input => "x",
            Self::AtomPmf => "atom_pmf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub target: ProbeTarget,
    /// Residual stream after this block (0 is the embedding).
    pub layer: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub holdout: f64,
    pub raw_frequency: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            target: ProbeTarget::Input,
            layer: 1,
            hidden: 32,
            epochs: 60,
            lr: 0.005,
            batch_size: 256,
            holdout: 0.2,
            raw_frequency: false,
        }
    }
}

/// Prior family and scale the probe sequences are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSampler {
    pub family: PriorFamily,
    pub theta_max: f64,
    pub seq_len: usize,
    pub sequences: usize,
}

impl Default for ProbeSampler {
    fn default() -> Self {
        Self { family: PriorFamily::Multinomial, theta_max: 50.0, seq_len: 128, sequences: 64 }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeDataset {
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
    /// Sequences dropped because a label could not be computed.
    pub skipped: usize,
}

/// Labels of one sequence for `target`.
pub fn sequence_labels(
    target: ProbeTarget,
    xs: &[u64],
    thetas: &[f64],
    prior: &DiscretePrior,
    raw_frequency: bool,
) -> Result<Vec<f64>> {
    Ok(match target {
        ProbeTarget::Input => xs.iter().map(|&x| x as f64).collect(),
        ProbeTarget::Frequency => {
            let t = FrequencyTable::new(xs);
            let scale = if raw_frequency { 1.0 } else { 1.0 / xs.len() as f64 };
            xs.iter().map(|&x| t.count(x) as f64 * scale).collect()
        }
        ProbeTarget::NpmleDensity => {
            let fit = npmle_fit(xs, &NpmleConfig::default())?;
            xs.iter().map(|&x| mixture_logpmf(&fit.prior, x).exp()).collect()
        }
        ProbeTarget::AtomPmf => thetas.iter().map(|&t| prior.pmf(t)).collect(),
    })
}

/// Token activations at `cfg.layer` with labels; sequences are generated serially and
/// processed in parallel.
pub fn build_probe_dataset(
    params: &ModelParams,
    sampler: &ProbeSampler,
    cfg: &ProbeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ProbeDataset> {
    if cfg.layer > params.config.layers {
        return Err(Error::InvalidArgument(format!("layer {} beyond depth {}", cfg.layer, params.config.layers)));
    }
    let spec = ExperimentSpec { theta_max: sampler.theta_max, ..ExperimentSpec::default() };
    let worst = if sampler.family == PriorFamily::WorstCase {
        Some(
            poisson_eb::priors::worst_case_prior_cached(&poisson_eb::priors::WorstCaseConfig::new(sampler.theta_max))?
                .prior,
        )
    } else {
        None
    };
    let mut seqs = Vec::with_capacity(sampler.sequences);
    for _ in 0..sampler.sequences {
        let prior = sample_family_prior(sampler.family, &spec, worst.as_ref(), rng)?;
        let batch = sample_batch(&prior, sampler.seq_len, sampler.family.as_str(), rng);
        seqs.push((prior, batch));
    }
    let parts: Vec<Result<Option<(Array2<f64>, Vec<f64>)>>> = seqs
        .par_iter()
        .map(|(prior, batch)| {
            let labels = match sequence_labels(cfg.target, &batch.xs, &batch.thetas, prior, cfg.raw_frequency) {
                Ok(l) => l,
                Err(Error::Core(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let (_, acts) = forward_capture(params, &batch.xs, &[cfg.layer])?;
            Ok(Some((acts.into_iter().next().expect("one layer captured"), labels)))
        })
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0;
    for p in parts {
        match p? {
            Some((a, l)) => {
                rows.push(a);
                labels.extend(l);
            }
            None => skipped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::Degenerate("every probe sequence was skipped".into()));
    }
    let views: Vec<_> = rows.iter().map(|a| a.view()).collect();
    let features = ndarray::concatenate(Axis(0), &views).expect("equal widths");
    Ok(ProbeDataset { features, labels, skipped })
}

/// `layer_norm -> linear(d, hidden) -> GELU -> linear(hidden, 1)`.
#[derive(Debug, Clone)]
pub struct ProbeHead {
    pub norm: LayerNorm,
    pub hidden: Linear,
    pub out: Linear,
    /// Label standardization applied during training.
    pub label_mean: f64,
    pub label_scale: f64,
}

impl ProbeHead {
    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        let (a, _) = layer_norm(x, &self.norm);
        let h = (a.dot(&self.hidden.w) + &self.hidden.b).mapv(gelu);
        let y = h.dot(&self.out.w) + &self.out.b;
        y.column(0).iter().map(|v| v * self.label_scale + self.label_mean).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub head: ProbeHead,
    pub r2_train: f64,
    pub r2_holdout: f64,
    pub n_rows: usize,
}

/// Coefficient of determination against the mean of `y`.
pub fn r_squared(y: &[f64], pred: &[f64]) -> Result<f64> {
    let k = y.len() as f64;
    let mean = y.iter().sum::<f64>() / k;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if !(sst > 0.0) {
        return Err(Error::Degenerate("labels have zero variance; R^2 undefined".into()));
    }
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

fn select(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Trains a probe head on a shuffled 1 - holdout split and scores both splits.
pub fn train_probe(data: &ProbeDataset, cfg: &ProbeConfig, rng: &mut ChaCha8Rng) -> Result<ProbeOutcome> {
    let n = data.labels.len();
    if n < 5 || data.features.nrows() != n {
        return Err(Error::InvalidArgument(format!("probe dataset needs >= 5 aligned rows, got {n}")));
    }
    if !(0.0 < cfg.holdout && cfg.holdout < 1.0) || cfg.hidden == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("invalid probe config".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_hold = ((n as f64 * cfg.holdout).round() as usize).clamp(1, n - 1);
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let y_train: Vec<f64> = train_idx.iter().map(|&i| data.labels[i]).collect();
    let y_hold: Vec<f64> = hold_idx.iter().map(|&i| data.labels[i]).collect();
    let mean = y_train.iter().sum::<f64>() / y_train.len() as f64;
    let sd = (y_train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y_train.len() as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate("labels have zero variance; R^2 undefined".into()));
    }
    let d = data.features.ncols();
    let mut head = ProbeHead {
        norm: LayerNorm::identity(d),
        hidden: Linear::random(d, cfg.hidden, (1.0 / d as f64).sqrt(), rng),
        out: Linear::random(cfg.hidden, 1, (1.0 / cfg.hidden as f64).sqrt(), rng),
        label_mean: mean,
        label_scale: sd,
    };
    let mut adam = ProbeAdam::new(&head);
    let mut idx = train_idx.to_vec();
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.batch_size) {
            let x = select(&data.features, chunk);
            let y: Array1<f64> = chunk.iter().map(|&i| (data.labels[i] - mean) / sd).collect();
            let grads = probe_grad(&head, &x, &y);
            adam.step(&mut head, &grads, cfg.lr);
        }
    }
    let r2_train = r_squared(&y_train, &head.predict(&select(&data.features, train_idx)))?;
    let r2_holdout = r_squared(&y_hold, &head.predict(&select(&data.features, hold_idx)))?;
    Ok(ProbeOutcome { head, r2_train, r2_holdout, n_rows: n })
}

struct ProbeGrads {
    norm: LayerNorm,
    hidden: Linear,
    out: Linear,
}

fn probe_grad(head: &ProbeHead, x: &Array2<f64>, y: &Array1<f64>) -> ProbeGrads {
    let b = x.nrows() as f64;
    let (a, cache) = layer_norm(x, &head.norm);
    let u = a.dot(&head.hidden.w) + &head.hidden.b;
    let h = u.mapv(gelu);
    let pred = h.dot(&head.out.w) + &head.out.b;
    let mut dy = pred;
    for (d, t) in dy.column_mut(0).iter_mut().zip(y) {
        *d = 2.0 * (*d - t) / b;
    }
    let out = Linear { w: h.t().dot(&dy).as_standard_layout().into_owned(), b: dy.sum_axis(Axis(0)) };
    let mut du = dy.dot(&head.out.w.t());
    ndarray::Zip::from(&mut du).and(&u).for_each(|g, &v| *g *= gelu_grad(v));
    let hidden = Linear { w: a.t().dot(&du).as_standard_layout().into_owned(), b: du.sum_axis(Axis(0)) };
    let da = du.dot(&head.hidden.w.t());
    let mut norm = LayerNorm::zeros(x.ncols());
    layer_norm_backward(&da, &cache, &head.norm, &mut norm);
    ProbeGrads { norm, hidden, out }
}

/// Adam over the probe head's five tensors.
struct ProbeAdam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

fn head_slices(h: &mut ProbeHead) -> [&mut [f64]; 6] {
    [
        h.norm.gamma.as_slice_mut().expect("contiguous"),
        h.norm.beta.as_slice_mut().expect("contiguous"),
        h.hidden.w.as_slice_mut().expect("contiguous"),
        h.hidden.b.as_slice_mut().expect("contiguous"),
        h.out.w.as_slice_mut().expect("contiguous"),
        h.out.b.as_slice_mut().expect("contiguous"),
    ]
}

fn grad_slices(g: &ProbeGrads) -> [&[f64]; 6] {
    [
        g.norm.gamma.as_slice().expect("contiguous"),
        g.norm.beta.as_slice().expect("contiguous"),
        g.hidden.w.as_slice().expect("contiguous"),
        g.hidden.b.as_slice().expect("contiguous"),
        g.out.w.as_slice().expect("contiguous"),
        g.out.b.as_slice().expect("contiguous"),
    ]
}

impl ProbeAdam {
    fn new(head: &ProbeHead) -> Self {
        let mut h = head.clone();
        let sizes: Vec<usize> = head_slices(&mut h).iter().map(|s| s.len()).collect();
        Self {
            cfg: AdamConfig::default(),
            m: sizes.iter().map(|&k| vec![0.0; k]).collect(),
            v: sizes.iter().map(|&k| vec![0.0; k]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, head: &mut ProbeHead, g: &ProbeGrads, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let (c1, c2) = (1.0 - beta1.powi(self.t), 1.0 - beta2.powi(self.t));
        for (((p, g), m), v) in head_slices(head).into_iter().zip(grad_slices(g)).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub layer: usize,
    pub target: String,
    pub r2_train: f64,
    pub r2_holdout: f64,
    pub n_rows: usize,
    pub skipped: usize,
}

/// Probe every layer `1..=N` for every target; the model parameters are never modified.
pub fn probe_depth_profile(
    params: &ModelParams,
    targets: &[ProbeTarget],
    sampler: &ProbeSampler,
    base: &ProbeConfig,
    seed: u64,
) -> Result<Vec<ProfileRow>> {
    let before = params.checksum();
    let mut rows = Vec::new();
    for &target in targets {
        for layer in 1..=params.config.layers {
            // Same sequences for every layer of a target.
            let mut data_rng = ChaCha8Rng::seed_from_u64(seed ^ (target as u64) << 32);
            let cfg = ProbeConfig { target, layer, ..*base };
            let data = build_probe_dataset(params, sampler, &cfg, &mut data_rng)?;
            let mut train_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(layer as u64));
            let out = train_probe(&data, &cfg, &mut train_rng)?;
            rows.push(ProfileRow {
                layer,
                target: target.as_str().into(),
                r2_train: out.r2_train,
                r2_holdout: out.r2_holdout,
                n_rows: out.n_rows,
                skipped: data.skipped,
            });
        }
    }
    assert_eq!(params.checksum(), before, "probing modified the model");
    Ok(rows)
}

/// Writes `layer,target,r2_train,r2_holdout,n_rows,skipped`, clipping R^2 at -1 for display.
pub fn write_profile_csv<W: Write>(rows: &[ProfileRow], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(ProfileRow { r2_train: r.r2_train.max(-1.0), r2_holdout: r.r2_holdout.max(-1.0), ..r.clone() })?;
    }
    csv.flush()?;
    Ok(())
}

/// Standardized random activations: every row has mean 0 and variance 1.
pub fn standardized_rows<R: Rng + ?Sized>(rows: usize, d: usize, rng: &mut R) -> Array2<f64> {
    let mut x = Array2::from_shape_fn((rows, d), |_| rng.random::<f64>() - 0.5);
    for mut row in x.rows_mut() {
        let m = row.mean().expect("non-empty");
        row.mapv_inplace(|v| v - m);
        let s = (row.iter().map(|v| v * v).sum::<f64>() / d as f64).sqrt();
        row.mapv_inplace(|v| v / s);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use tinyformer::ModelConfig;

    #[test]
    fn frequency_and_input_labels() {
        let prior = DiscretePrior::point_mass(1.0).unwrap();
        let xs = [0, 0, 1, 2];
        let f = sequence_labels(ProbeTarget::Frequency, &xs, &[1.0; 4], &prior, false).unwrap();
        assert_eq!(f, vec![0.5, 0.5, 0.25, 0.25]);
        let raw = sequence_labels(ProbeTarget::Frequency, &xs, &[1.0; 4], &prior, true).unwrap();
        assert_eq!(raw, vec![2.0, 2.0, 1.0, 1.0]);
        let x = sequence_labels(ProbeTarget::Input, &xs, &[1.0; 4], &prior, false).unwrap();
        assert_eq!(x, vec![0.0, 0.0, 1.0, 2.0]);
        let pmf = sequence_labels(ProbeTarget::AtomPmf, &xs, &[1.0; 4], &prior, false).unwrap();
        assert_eq!(pmf, vec![1.0; 4]);
    }

    #[test]
    fn copied_coordinate_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let features = standardized_rows(3000, 16, &mut rng);
        let labels = features.column(3).to_vec();
        let data = ProbeDataset { features, labels, skipped: 0 };
        let out = train_probe(&data, &ProbeConfig { epochs: 40, ..ProbeConfig::default() }, &mut rng).unwrap();
        assert!(out.r2_holdout >= 0.99, "{}", out.r2_holdout);
    }

    #[test]
    fn noise_is_not_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let features = standardized_rows(3000, 16, &mut rng);
        let labels = (0..3000).map(|_| rng.random::<f64>()).collect();
        let data = ProbeDataset { features, labels, skipped: 0 };
        let out = train_probe(&data, &ProbeConfig { epochs: 20, ..ProbeConfig::default() }, &mut rng).unwrap();
        assert!(out.r2_holdout <= 0.05, "{}", out.r2_holdout);
        assert!(out.r2_train >= out.r2_holdout);
    }

    #[test]
    fn constant_labels_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = ProbeDataset { features: standardized_rows(50, 4, &mut rng), labels: vec![2.0; 50], skipped: 0 };
        assert!(matches!(train_probe(&data, &ProbeConfig::default(), &mut rng), Err(Error::Degenerate(_))));
    }

    #[test]
    fn dataset_rows_and_frozen_weights() {
        let cfg = ModelConfig { layers: 2, d_model: 8, heads: 2, ffn_width: 8, ..ModelConfig::default() };
        let params = ModelParams::init(&cfg).unwrap();
        let sampler = ProbeSampler { family: PriorFamily::Neural, theta_max: 10.0, seq_len: 20, sequences: 5 };
        let pc = ProbeConfig { target: ProbeTarget::Input, layer: 2, ..ProbeConfig::default() };
        let data = build_probe_dataset(&params, &sampler, &pc, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(data.features.dim(), (100, 8));
        assert_eq!(data.labels.len(), 100 - 20 * data.skipped);
        let before = params.checksum();
        let rows = probe_depth_profile(&params, &[ProbeTarget::Input, ProbeTarget::Frequency], &sampler, &ProbeConfig { epochs: 2, ..pc }, 5).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(params.checksum(), before);
        assert!(rows.iter().all(|r| r.r2_holdout <= 1.0));
    }
}
