use poisson_eb::estimators::erm::{erm_objective, erm_table};
use poisson_eb::estimators::npmle::{log_likelihood, npmle_fit, NpmleConfig};
use poisson_eb::estimators::{build_estimator, robbins_clipped, EstimatorContext, ESTIMATOR_IDS};
use poisson_eb::poisson::{bayes_estimate, mmse_default, sample_batch};
use poisson_eb::priors::worst_case::{point_risks, worst_case_prior_cached_in, WorstCaseConfig};
use poisson_eb::robbins_net::{robbins_net_forward, robbins_net_linear_forward, RobbinsNetSpec};
use poisson_eb::{DiscretePrior, FrequencyTable};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_registered_estimator_runs() {
    let prior = DiscretePrior::new(vec![1.0, 4.0, 9.0], vec![0.3, 0.4, 0.3], 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let batch = sample_batch(&prior, 300, "three-atoms", &mut rng);
    let ctx = EstimatorContext { theta_max: 10.0, ..EstimatorContext::default() };
    for id in ESTIMATOR_IDS {
        let est = build_estimator(id, &ctx).unwrap();
        let out = est.run(&batch.xs).unwrap();
        assert_eq!(out.estimator_id, *id);
        assert_eq!(out.estimates.len(), batch.xs.len(), "{id}");
        assert!(out.estimates.iter().all(|v| v.is_finite() && *v >= 0.0), "{id}");
    }
    assert!(build_estimator("nope", &ctx).is_err());
}

#[test]
fn two_point_prior_posterior_mean() {
    // Closed form: E[theta | x] = (w1 a^(x+1) e^-a + w2 b^(x+1) e^-b) / (w1 a^x e^-a + w2 b^x e^-b).
    let (a, b, w1) = (1.5f64, 6.0f64, 0.25f64);
    let prior = DiscretePrior::new(vec![a, b], vec![w1, 1.0 - w1], 6.0).unwrap();
    for x in 0..40u64 {
        let pa = w1 * a.powi(x as i32) * (-a).exp();
        let pb = (1.0 - w1) * b.powi(x as i32) * (-b).exp();
        let expect = (a * pa + b * pb) / (pa + pb);
        let got = bayes_estimate(&prior, x).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect.max(1.0), "x={x}: {got} vs {expect}");
    }
}

#[test]
fn least_favorable_prior_equalizes_risk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = WorstCaseConfig::new(3.0);
    let lfp = worst_case_prior_cached_in(dir.path(), &cfg).unwrap();
    assert!(lfp.gap <= cfg.tol);
    assert!((lfp.mmse - mmse_default(&lfp.prior)).abs() < 1e-9);
    let on_grid: Vec<f64> = (0..=60).map(|i| cfg.spacing * i as f64).collect();
    let worst = point_risks(&lfp.prior, &on_grid).into_iter().fold(f64::MIN, f64::max);
    assert!(worst <= lfp.mmse + 2.0 * cfg.tol, "{worst} vs {}", lfp.mmse);
    // Between grid points the risk bulges by a discretization term of order spacing^2.
    let fine: Vec<f64> = (0..=3000).map(|i| 3.0 * i as f64 / 3000.0).collect();
    let worst = point_risks(&lfp.prior, &fine).into_iter().fold(f64::MIN, f64::max);
    assert!(worst <= lfp.mmse + 1e-3, "{worst} vs {}", lfp.mmse);
    // Second call is served from the cache.
    assert_eq!(worst_case_prior_cached_in(dir.path(), &cfg).unwrap(), lfp);
}

#[test]
fn npmle_beats_the_true_prior_in_likelihood() {
    let prior = DiscretePrior::new(vec![0.5, 3.0, 12.0], vec![0.5, 0.3, 0.2], 12.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = sample_batch(&prior, 1000, "npmle", &mut rng);
    let cfg = NpmleConfig { gap_tol: 1e-6, ..NpmleConfig::default() };
    let fit = npmle_fit(&batch.xs, &cfg).unwrap();
    // The duality gap bounds the shortfall to the sup at n * gap_tol.
    assert!(log_likelihood(&batch.xs, &fit.prior) + batch.xs.len() as f64 * 1e-6 >= log_likelihood(&batch.xs, &prior));
}

fn monotone_candidates(len: usize, cap: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, len).prop_map(move |steps| {
        let total: f64 = steps.iter().sum::<f64>().max(1e-12);
        let mut acc = 0.0;
        steps.iter().map(|s| { acc += s / total * cap; acc.min(cap) }).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn erm_is_no_worse_than_any_monotone_rule(
        xs in prop::collection::vec(0u64..8, 1..60),
        cand in monotone_candidates(9, 9.0),
    ) {
        let table = FrequencyTable::new(&xs);
        let g = erm_table(&table, 9.0);
        prop_assert!(g.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(g.iter().all(|v| (0.0..=9.0).contains(v)));
        let cand = &cand[..g.len()];
        prop_assert!(erm_objective(&table, &g) <= erm_objective(&table, cand) + 1e-9);
    }

    #[test]
    fn robbins_networks_match_clipped_rule(xs in prop::collection::vec(0u64..10, 1..40), d in 1usize..8) {
        let spec = RobbinsNetSpec::new(d, 12.0).unwrap();
        let expect = robbins_clipped(&xs, d as u64, 12.0);
        for got in [robbins_net_forward(&spec, &xs), robbins_net_linear_forward(&spec, &xs)] {
            for (g, e) in got.iter().zip(&expect) {
                prop_assert!((g - e).abs() <= 1e-6, "{g} vs {e}");
            }
        }
    }
}
