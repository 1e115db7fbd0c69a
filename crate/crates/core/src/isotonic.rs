//! Weighted isotonic regression by pool-adjacent-violators.

/// Nondecreasing `g` minimizing `sum_i w_i (g_i - y_i)^2`. Weights must be positive.
pub fn pava(targets: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(targets.len(), weights.len(), "targets and weights differ in length");
    // Each block: (weighted mean, total weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(targets.len());
    for (&y, &w) in targets.iter().zip(weights) {
        debug_assert!(w > 0.0);
        let mut cur = (y, w, 1usize);
        while let Some(&(m, bw, len)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let tw = bw + cur.1;
            cur = ((m * bw + cur.0 * cur.1) / tw, tw, len + cur.2);
        }
        blocks.push(cur);
    }
    blocks.iter().flat_map(|&(m, _, len)| std::iter::repeat_n(m, len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pools_violators() {
        assert_eq!(pava(&[0.5, 2.0, 0.0], &[2.0, 1.0, 1.0]), vec![0.5, 1.0, 1.0]);
        assert_eq!(pava(&[3.0, 2.0, 1.0], &[1.0, 1.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(pava(&[1.0, 2.0], &[1.0, 1.0]), vec![1.0, 2.0]);
        assert!(pava(&[], &[]).is_empty());
    }

    fn loss(g: &[f64], y: &[f64], w: &[f64]) -> f64 {
        g.iter().zip(y).zip(w).map(|((g, y), w)| w * (g - y).powi(2)).sum()
    }

    proptest! {
        #[test]
        fn monotone_and_no_worse_than_perturbations(
            data in prop::collection::vec((-10.0f64..10.0, 0.1f64..5.0), 1..30),
            delta in -0.5f64..0.5,
        ) {
            let (y, w): (Vec<f64>, Vec<f64>) = data.into_iter().unzip();
            let g = pava(&y, &w);
            prop_assert!(g.windows(2).all(|p| p[0] <= p[1] + 1e-12));
            // A uniform shift is always feasible.
            let base = loss(&g, &y, &w);
            let shifted: Vec<f64> = g.iter().map(|v| v + delta).collect();
            prop_assert!(base <= loss(&shifted, &y, &w) + 1e-9);
            // Weighted mean is preserved.
            let sy: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum();
            let sg: f64 = g.iter().zip(&w).map(|(a, b)| a * b).sum();
            prop_assert!((sy - sg).abs() < 1e-8);
        }
    }
}
