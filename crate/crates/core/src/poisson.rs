//! Poisson helpers shared by the mixture models.

use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::gamma_lr;

/// `log P(X = k)` for `X ~ Poisson(lambda)`, `lambda > 0`.
#[inline]
pub fn ln_pmf(k: u64, lambda: f64) -> f64 {
    if k == 0 {
        -lambda
    } else {
        k as f64 * lambda.ln() - lambda - ln_factorial(k)
    }
}

/// `P(X = k)`, zero for negative `k`.
#[inline]
pub fn pmf(k: i64, lambda: f64) -> f64 {
    if k < 0 {
        0.0
    } else {
        ln_pmf(k as u64, lambda).exp()
    }
}

/// Upper tail `P(X >= k)`, computed through the regularized lower incomplete
/// gamma function so small tails keep full relative precision.
pub fn upper_tail(k: u64, lambda: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        gamma_lr(k as f64, lambda)
    }
}
