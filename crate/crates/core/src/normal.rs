//! Standard normal distribution function and its inverse.
//!
//! `Φ(x) = erfc(−x/√2)/2` with the complementary error function from `libm`.
//! The quantile starts from `−√2 erfc⁻¹(2p)` (`statrs`) and is polished by
//! Newton steps on `Φ`.

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{invalid, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// `Φ^{-1}(p)` for `0 < p < 1`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("probability {p} outside (0, 1)"));
    }
    let mut q = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let pdf = std_normal_pdf(q);
        if pdf > 0.0 {
            q -= (std_normal_cdf(q) - p) / pdf;
        }
    }
    Ok(q)
}

/// Upper critical value `z_α = Φ^{-1}(1 − α)`.
pub fn upper_critical(alpha: f64) -> Result<f64> {
    std_normal_quantile(1.0 - alpha)
}
