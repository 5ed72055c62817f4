//! Numerical differentiation helper for verifying layer gradients.

/// Central difference (f(x+eps) - f(x-eps)) / 2 eps.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}
