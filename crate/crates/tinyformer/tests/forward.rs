use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyformer::adam::{Adam, AdamConfig};
use tinyformer::params::Linear;
use tinyformer::{forward, loss_and_grad, AttentionKind, ModelConfig, ModelParams};

fn random_params(attention: AttentionKind, seed: u64) -> ModelParams {
    let cfg = ModelConfig { layers: 4, d_model: 12, heads: 3, ffn_width: 20, attention, seed, ..ModelConfig::default() };
    let mut p = ModelParams::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for mut t in p.tensors_mut() {
        t.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
    }
    p
}

fn lin(x: &[Vec<f64>], l: &Linear) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| (0..l.w.ncols()).map(|j| l.b[j] + row.iter().enumerate().map(|(i, v)| v * l.w[[i, j]]).sum::<f64>()).collect())
        .collect()
}

fn norm(x: &[Vec<f64>], gamma: &ndarray::Array1<f64>, beta: &ndarray::Array1<f64>) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            row.iter().enumerate().map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * gamma[j] + beta[j]).collect()
        })
        .collect()
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh())
}

/// Straight-line evaluation of the linear-attention model, one scalar at a time.
fn naive_linear(p: &ModelParams, xs: &[u64]) -> Vec<f64> {
    let cfg = &p.config;
    let n = xs.len();
    let feats: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x as f64 / cfg.input_scale, (1.0 + x as f64).ln()]).collect();
    let mut h = lin(&feats, &p.embed);
    let dh = cfg.d_model / cfg.heads;
    for layer in 0..cfg.layers {
        let b = &p.groups[usize::from(layer >= cfg.layers / 2)];
        let a = norm(&h, &b.ln1.gamma, &b.ln1.beta);
        let (q, k, v) = (lin(&a, &b.q), lin(&a, &b.k), lin(&a, &b.v));
        let mut att = vec![vec![0.0; cfg.d_model]; n];
        for head in 0..cfg.heads {
            for i in 0..n {
                for c in 0..dh {
                    let col = head * dh + c;
                    // (1/n) sum_j (q_i . k_j) v_j
                    let mut acc = 0.0;
                    for j in 0..n {
                        let dot: f64 = (0..dh).map(|e| q[i][head * dh + e] * k[j][head * dh + e]).sum();
                        acc += dot * v[j][col];
                    }
                    att[i][col] = acc / n as f64;
                }
            }
        }
        let o = lin(&att, &b.o);
        for (hr, or) in h.iter_mut().zip(&o) {
            hr.iter_mut().zip(or).for_each(|(a, b)| *a += b);
        }
        let bn = norm(&h, &b.ln2.gamma, &b.ln2.beta);
        let u: Vec<Vec<f64>> = lin(&bn, &b.ff1).into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
        let f = lin(&u, &b.ff2);
        for (hr, fr) in h.iter_mut().zip(&f) {
            hr.iter_mut().zip(fr).for_each(|(a, b)| *a += b);
        }
    }
    let z = norm(&h, &p.ln_f.gamma, &p.ln_f.beta);
    lin(&z, &p.head).into_iter().map(|r| r[0] * cfg.output_scale).collect()
}

#[test]
fn linear_attention_matches_naive_evaluation() {
    let p = random_params(AttentionKind::LinearIdentity, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<u64> = (0..23).map(|_| rng.random_range(0..60)).collect();
    let fast = forward(&p, &xs).unwrap();
    let slow = naive_linear(&p, &xs);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn sequences_do_not_interact() {
    let p = random_params(AttentionKind::Softmax, 4);
    let a = forward(&p, &[1, 5, 2]).unwrap();
    let _ = forward(&p, &[100, 0, 0, 7]).unwrap();
    assert_eq!(forward(&p, &[1, 5, 2]).unwrap(), a);
}

#[test]
fn adam_overfits_a_fixed_batch() {
    for attention in [AttentionKind::Softmax, AttentionKind::LinearIdentity] {
        let mut p = random_params(attention, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let thetas: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..20.0)).collect();
        let xs: Vec<u64> = thetas.iter().map(|&t| poisson_eb::poisson::sample_poisson(t, &mut rng)).collect();
        let mut adam = Adam::new(&p, AdamConfig::default());
        let (first, _) = loss_and_grad(&p, &xs, &thetas).unwrap();
        let mut last = first;
        for _ in 0..100 {
            let (loss, g) = loss_and_grad(&p, &xs, &thetas).unwrap();
            adam.step(&mut p, &g, 0.01);
            last = loss;
        }
        assert!(last < 0.5 * first, "{attention:?}: {first} -> {last}");
    }
}
