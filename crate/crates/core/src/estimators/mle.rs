/// The unbiased estimate `theta_hat(x) = x`.
pub fn mle(xs: &[u64]) -> Vec<f64> {
    xs.iter().map(|&x| x as f64).collect()
}
