//! Standard normal helpers.

use libm::{erf, erfc};

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn cdf(z: f64) -> f64 {
    if z < -1.0 {
        0.5 * erfc(-z / std::f64::consts::SQRT_2)
    } else {
        0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
    }
}

/// Upper tail `1 - Φ(z)` without cancellation for large `z`.
pub fn sf(z: f64) -> f64 {
    cdf(-z)
}

/// Inverse of [`cdf`]; returns `±inf` at the endpoints.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let z = statrs::function::erf::erfc_inv(2.0 * p) * -std::f64::consts::SQRT_2;
    // one Halley step against the more accurate forward cdf
    let d = pdf(z);
    if !z.is_finite() || d <= 0.0 {
        return z;
    }
    let e = (cdf(z) - p) / d;
    z - e / (1.0 + 0.5 * z * e)
}
