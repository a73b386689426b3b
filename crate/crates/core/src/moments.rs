//! Closed-form random-matrix moments and the exact combinatorial identities
//! behind the higher-order bias terms.

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};

use crate::bias::inv_power_norm2;
use crate::error::{invalid, Error, Result};

/// `E‖Λ^{-j₁} Z Zᵀ Λ^{-j₂}‖_F²` for `Z ∈ R^{r×d}` with i.i.d. standard normal entries:
/// `d²‖Λ^{-j₁-j₂}‖_F² + d(‖Λ^{-j₁-j₂}‖_F² + ‖Λ^{-j₁}‖_F² ‖Λ^{-j₂}‖_F²)`.
pub fn wishart_frobenius_moment(lambda: &[f64], d: usize, j1: usize, j2: usize) -> Result<f64> {
    if j1 == 0 || j2 == 0 || d == 0 {
        return invalid("j1, j2 and d must be positive");
    }
    if lambda.is_empty() || lambda.iter().any(|&l| l.is_nan() || l <= 0.0) {
        return invalid("singular values must be positive");
    }
    let d = d as f64;
    let joint = inv_power_norm2(lambda, j1 + j2);
    Ok(d * d * joint + d * (joint + inv_power_norm2(lambda, j1) * inv_power_norm2(lambda, j2)))
}

/// Binomial coefficient, zero outside `0 ≤ k ≤ n`.
pub fn binomial(n: i64, k: i64) -> BigInt {
    if n < 0 || k < 0 || k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

fn sign(exp: i64) -> BigInt {
    if exp.rem_euclid(2) == 0 {
        BigInt::one()
    } else {
        -BigInt::one()
    }
}

/// Leading-order trace moment `E tr((GGᵀ)^{t-1})` of a `d1m × (d2m+1)` Gaussian `G`:
/// `(1/(t−1)) Σ_{q=0}^{t−2} d1m^{q+1} (d2m+1)^{t−1−q} C(t−1, q+1) C(t−1, q)`.
pub fn mp_trace_moment(t: usize, d1m: u64, d2m: u64) -> Result<BigInt> {
    if t < 2 {
        return invalid("moment order t must be at least 2");
    }
    let k = (t - 1) as i64;
    let p = BigInt::from(d1m);
    let n = BigInt::from(d2m) + 1u32;
    let mut total = BigInt::zero();
    for q in 0..k {
        total += p.pow((q + 1) as u32) * n.pow((k - q) as u32) * binomial(k, q + 1) * binomial(k, q);
    }
    let (quot, rem) = (&total / k, &total % k);
    if !rem.is_zero() {
        return Err(Error::InternalConsistency(format!(
            "Narayana sum {total} not divisible by {k}"
        )));
    }
    Ok(quot)
}

/// `β_t = (1 + λ²/(1+d2m)) · mp_trace_moment(t, d1m, d2m)`.
pub fn mp_moment_beta(t: usize, d1m: u64, d2m: u64, lambda_sq: f64) -> Result<f64> {
    let base = mp_trace_moment(t, d1m, d2m)?
        .to_f64()
        .ok_or_else(|| Error::NumericalFailure("moment exceeds f64 range".into()))?;
    Ok(base * (1.0 + lambda_sq / (1.0 + d2m as f64)))
}

/// `Σ_{t=0}^{k₀−1} (−1)^t C(k₀+t, t+1) C(k₀−1, t)`
pub fn first_identity_sum(k0: i64) -> BigInt {
    (0..k0)
        .map(|t| sign(t) * binomial(k0 + t, t + 1) * binomial(k0 - 1, t))
        .sum()
}

/// `Σ_{t=1}^{k₀−1} (−1)^t C(k₀+t−2, t−1) C(k₀−1, t)`
pub fn second_identity_sum(k0: i64) -> BigInt {
    (1..k0)
        .map(|t| sign(t) * binomial(k0 + t - 2, t - 1) * binomial(k0 - 1, t))
        .sum()
}

/// Coefficients `(a, b)` of `E_{2k₀} = a·d1m^{k₀} + b·d1m^{k₀−1}d2m` obtained by
/// summing the per-`t` expansion
/// `E_{2k₀,t} = d1m^{k₀}(−1)^t C(k₀+t−1,t) C(k₀−1,t−1) − d1m^{k₀−1}d2m (−1)^t C(k₀+t−1,t) C(k₀−1,t+1)`
/// over `t = 0..=k₀`.
pub fn error_term_expansion(k0: i64) -> (BigInt, BigInt) {
    let mut a = BigInt::zero();
    let mut b = BigInt::zero();
    for t in 0..=k0 {
        let common = sign(t) * binomial(k0 + t - 1, t);
        a += &common * binomial(k0 - 1, t - 1);
        b -= &common * binomial(k0 - 1, t + 1);
    }
    (a, b)
}

/// Closed form `E_{2k₀} = (−1)^{k₀} d1m^{k₀−1} (d1m − d2m)`.
pub fn error_term_closed(k0: i64, d1m: &BigInt, d2m: &BigInt) -> BigInt {
    sign(k0) * d1m.pow((k0 - 1) as u32) * (d1m - d2m)
}

fn error_term_from_expansion(k0: i64, d1m: &BigInt, d2m: &BigInt) -> BigInt {
    let (a, b) = error_term_expansion(k0);
    a * d1m.pow(k0 as u32) + b * d1m.pow((k0 - 1) as u32) * d2m
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityRow {
    pub k0: i64,
    pub first_sum: BigInt,
    /// `None` for `k₀ = 1`, where the sum is empty.
    pub second_sum: Option<BigInt>,
    /// `None` for `k₀ = 1`; the per-`t` expansion starts at `k₀ = 2`.
    pub error_coefficients: Option<(BigInt, BigInt)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
}

/// Evaluation points for the `E_{2k₀}` polynomial check.
const SAMPLE_DIMS: [(u64, u64); 4] = [(49, 149), (94, 594), (7, 3), (500, 500)];

/// Checks both binomial identities for `k₀ ≤ k0_max` and that the `E_{2k₀}`
/// expansion reproduces the closed form, all in exact integer arithmetic.
pub fn identity_checks(k0_max: usize) -> Result<IdentityReport> {
    if !(1..=25).contains(&k0_max) {
        return invalid(format!("k0_max {k0_max} outside 1..=25"));
    }
    let mut rows = Vec::with_capacity(k0_max);
    for k0 in 1..=k0_max as i64 {
        let expected = sign(k0 - 1);
        let first_sum = first_identity_sum(k0);
        if first_sum != expected {
            return Err(Error::InternalConsistency(format!(
                "first identity fails at k0={k0}: {first_sum} != {expected}"
            )));
        }
        let (second_sum, error_coefficients) = if k0 >= 2 {
            let s = second_identity_sum(k0);
            if s != expected {
                return Err(Error::InternalConsistency(format!(
                    "second identity fails at k0={k0}: {s} != {expected}"
                )));
            }
            let coeffs = error_term_expansion(k0);
            let target = sign(k0);
            if coeffs.0 != target || coeffs.1 != -&target {
                return Err(Error::InternalConsistency(format!(
                    "E_{{2k0}} coefficients at k0={k0} are {coeffs:?}"
                )));
            }
            for (p, q) in SAMPLE_DIMS {
                let (p, q) = (BigInt::from(p), BigInt::from(q));
                let lhs = error_term_from_expansion(k0, &p, &q);
                let rhs = error_term_closed(k0, &p, &q);
                if lhs != rhs {
                    return Err(Error::InternalConsistency(format!(
                        "E_{{2k0}} mismatch at k0={k0}, d1m={p}, d2m={q}: {lhs} != {rhs}"
                    )));
                }
            }
            (Some(s), Some(coeffs))
        } else {
            (None, None)
        };
        rows.push(IdentityRow {
            k0,
            first_sum,
            second_sum,
            error_coefficients,
        });
    }
    Ok(IdentityReport { rows })
}
