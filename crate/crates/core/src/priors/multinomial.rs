//! Priors on a fixed even grid with symmetric-Dirichlet weights.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::prior::DiscretePrior;

/// Grid `{0, h, ..., theta_max}` with `grid_size` points and Dirichlet(`concentration`) weights.
pub fn multinomial_grid_prior<R: Rng + ?Sized>(
    grid_size: usize,
    theta_max: f64,
    concentration: f64,
    rng: &mut R,
) -> Result<DiscretePrior> {
    if grid_size == 0 {
        return Err(Error::InvalidArgument("grid_size must be at least 1".into()));
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidArgument(format!("concentration: {e}")))?;
    let atoms: Vec<f64> = if grid_size == 1 {
        vec![0.0]
    } else {
        (0..grid_size)
            .map(|i| if i == grid_size - 1 { theta_max } else { theta_max * i as f64 / (grid_size - 1) as f64 })
            .collect()
    };
    let mut weights: Vec<f64> = (0..grid_size).map(|_| gamma.sample(rng)).collect();
    if weights.iter().sum::<f64>() == 0.0 {
        weights = vec![1.0; grid_size];
    }
    DiscretePrior::from_unnormalized(atoms, weights, theta_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point() {
        let p = multinomial_grid_prior(1, 50.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p.atoms(), &[0.0]);
        assert_eq!(p.weights(), &[1.0]);
    }

    #[test]
    fn even_grid_and_normalized() {
        let p = multinomial_grid_prior(11, 50.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let expect: Vec<f64> = (0..11).map(|i| 5.0 * i as f64).collect();
        for (a, e) in p.atoms().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(multinomial_grid_prior(0, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }
}
