//! Standard normal CDF and quantile.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::SQRT_2;

/// Quantile inputs are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-16;

/// Φ(x). Exact limits at ±∞.
#[inline]
pub fn cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x == f64::INFINITY {
        1.0
    } else {
        0.5 * erfc(-x / SQRT_2)
    }
}

/// Φ⁻¹(p) with `p` clamped away from {0, 1}, so the result is always finite.
#[inline]
pub fn quantile(p: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -SQRT_2 * erfc_inv(2.0 * p)
}
