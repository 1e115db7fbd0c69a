use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyformer::gradcheck::gradient_check;
use tinyformer::{AttentionKind, ModelConfig, ModelParams};

fn randomized(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::init(cfg).unwrap();
    // Perturb every tensor, including layer-norm gains and the decoder, off their init values.
    for mut t in p.tensors_mut() {
        t.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
    }
    p
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shapes = [(2, 8, 2, 16), (4, 12, 3, 8), (2, 6, 1, 10)];
    for attention in [AttentionKind::Softmax, AttentionKind::LinearIdentity] {
        for (i, &(layers, d_model, heads, ffn_width)) in shapes.iter().enumerate() {
            let cfg = ModelConfig { layers, d_model, heads, ffn_width, attention, seed: i as u64, output_scale: 4.0, ..ModelConfig::default() };
            let p = randomized(&cfg, &mut rng);
            let n = rng.random_range(5..12);
            let xs: Vec<u64> = (0..n).map(|_| rng.random_range(0..30)).collect();
            let thetas: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
            for check in gradient_check(&p, &xs, &thetas, 20, 1e-4, &mut rng).unwrap() {
                assert!(check.max_rel_err <= 1e-4, "{attention:?} config {i} {}: {}", check.name, check.max_rel_err);
            }
        }
    }
}
