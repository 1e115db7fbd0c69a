//! Monotone empirical-risk minimizer.
//!
//! The Poisson shift identity `E[theta g(X)] = E[X g(X-1)]` turns the unobservable
//! squared error into the surrogate `sum_y N(y) g(y)^2 - 2 (y+1) N(y+1) g(y)`, which is
//! a weighted isotonic regression of the Robbins ratios.

use crate::freq::FrequencyTable;
use crate::isotonic::pava;

/// Surrogate risk of `g` evaluated on the grid `0..g.len()`.
pub fn erm_objective(table: &FrequencyTable, g: &[f64]) -> f64 {
    g.iter()
        .enumerate()
        .map(|(y, gy)| {
            let y = y as u64;
            table.count(y) as f64 * gy * gy - 2.0 * (y + 1) as f64 * table.count(y + 1) as f64 * gy
        })
        .sum()
}

/// Minimizer of [`erm_objective`] over nondecreasing `g` on `0..=max(xs)+1` with
/// values in `[0, cap]`. Points with `N(y) = 0` share their successor's value.
pub fn erm_table(table: &FrequencyTable, cap: f64) -> Vec<f64> {
    let len = table.counts().len();
    if len == 0 {
        return Vec::new();
    }
    // Fold each zero-count point's linear term into the next positive-count point.
    let mut positions = Vec::new();
    let mut weights = Vec::new();
    let mut linear = Vec::new();
    let mut carry = 0.0;
    for y in 0..len as u64 {
        let c = (y + 1) as f64 * table.count(y + 1) as f64;
        let n = table.count(y);
        if n == 0 {
            carry += c;
        } else {
            positions.push(y as usize);
            weights.push(n as f64);
            linear.push(c + carry);
            carry = 0.0;
        }
    }
    let targets: Vec<f64> = linear.iter().zip(&weights).map(|(c, w)| c / w).collect();
    let fitted: Vec<f64> = pava(&targets, &weights).into_iter().map(|v| v.clamp(0.0, cap)).collect();

    let mut g = vec![0.0; len];
    let mut k = 0;
    for (y, gy) in g.iter_mut().enumerate() {
        while k < positions.len() && positions[k] < y {
            k += 1;
        }
        *gy = if k < positions.len() { fitted[k] } else { *fitted.last().unwrap() };
    }
    debug_assert!(g.windows(2).all(|p| p[0] <= p[1]));
    g
}

/// ERM-monotone estimates; `cap = None` uses `max(xs) + 1`.
pub fn erm_monotone(xs: &[u64], cap: Option<f64>) -> Vec<f64> {
    let table = FrequencyTable::new(xs);
    let Some(max) = table.max_x() else {
        return Vec::new();
    };
    let g = erm_table(&table, cap.unwrap_or(max as f64 + 1.0));
    xs.iter().map(|&x| g[x as usize]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pooled_example() {
        assert_eq!(erm_monotone(&[0, 0, 1, 2], None), vec![0.5, 0.5, 1.0, 1.0]);
        let g = erm_table(&FrequencyTable::new(&[0, 0, 1, 2]), 3.0);
        assert_eq!(&g[..3], &[0.5, 1.0, 1.0]);
    }

    #[test]
    fn constant_sample_pools_with_predecessor() {
        // g(5) <= g(6) and the 6 N(6) g(5) reward pushes both to 6.
        assert_eq!(erm_monotone(&[6, 6, 6], None), vec![6.0; 3]);
    }

    #[test]
    fn cap_binds() {
        // Unconstrained pooled value is 5.5.
        assert_eq!(erm_monotone(&[5, 5, 6, 6], None), vec![5.5; 4]);
        assert_eq!(erm_monotone(&[5, 5, 6, 6], Some(2.0)), vec![2.0; 4]);
    }

    #[test]
    fn zero_count_gap_folds_forward() {
        // N(0)=1, N(1)=0, N(2)=1: the term 2 N(2) g(1) is absorbed by g(2).
        let t = FrequencyTable::new(&[0, 2]);
        let g = erm_table(&t, 10.0);
        assert_eq!(g[1], g[2]);
        let obj = erm_objective(&t, &g);
        for v in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let alt = [0.0, v, v, v];
            assert!(obj <= erm_objective(&t, &alt) + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn monotone_in_x(xs in prop::collection::vec(0u64..25, 1..200)) {
            let g = erm_table(&FrequencyTable::new(&xs), 26.0);
            prop_assert!(g.windows(2).all(|p| p[0] <= p[1]));
            let est = erm_monotone(&xs, None);
            prop_assert!(est.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}
