//! Closed-form bias ladder for `E dist²`, the CLT normalizer and the
//! shrinkage estimator of the singular values.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::Dims;

/// Which singular values feed the bias and normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaKind {
    True,
    Empirical,
    Shrunk,
}

impl std::str::FromStr for LambdaKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(Self::True),
            "empirical" => Ok(Self::Empirical),
            "shrunk" => Ok(Self::Shrunk),
            other => invalid(format!("unknown estimator `{other}` (true|empirical|shrunk)")),
        }
    }
}

/// Order of the bias correction: `B_k` or `B_∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BiasOrder {
    Finite(usize),
    Infinite,
}

impl std::fmt::Display for BiasOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Finite(k) => write!(f, "{k}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for BiasOrder {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "inf" {
            return Ok(Self::Infinite);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Self::Finite(k)),
            _ => invalid(format!("bias order must be a positive integer or `inf`, got `{s}`")),
        }
    }
}

/// A set of `r` singular values together with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularValueEstimate {
    pub kind: LambdaKind,
    pub values: Vec<f64>,
    /// One flag per entry; `false` where the shrinkage discriminant was
    /// negative and the empirical value was kept instead.
    pub valid: Vec<bool>,
}

impl SingularValueEstimate {
    pub fn exact(kind: LambdaKind, values: Vec<f64>) -> Self {
        let valid = vec![true; values.len()];
        Self { kind, values, valid }
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn failures(&self) -> usize {
        self.valid.iter().filter(|&&v| !v).count()
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `‖Λ^{-k}‖_F² = Σ_j λ_j^{-2k}`, summed from the smallest `λ_j` (largest term)
/// down. Terms below the smallest normal `f64` count as zero.
pub fn inv_power_norm2(lambda: &[f64], k: usize) -> f64 {
    compensated_sum(lambda.iter().rev().map(|l| {
        let t = l.powi(-2 * k as i32);
        if t < f64::MIN_POSITIVE {
            0.0
        } else {
            t
        }
    }))
}

fn check_positive(lambda: &[f64]) -> Result<()> {
    if lambda.is_empty() || lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return invalid("singular values must be positive and finite");
    }
    Ok(())
}

/// `B_k = 2d⋆‖Λ^{-1}‖_F² − 2 Σ_{k₀=2}^{k} (−1)^{k₀} (d1m^{k₀−1} − d2m^{k₀−1})(d1m − d2m) ‖Λ^{-k₀}‖_F²`.
///
/// Evaluated per singular value in the ratio form
/// `λ_j^{-2} (d1m − d2m) [(d1m/λ_j²)^{k₀−1} − (d2m/λ_j²)^{k₀−1}]`, which avoids
/// overflow of `d^{k₀}` for deep orders and is exactly zero when `d1 = d2`.
pub fn bias_k(dims: Dims, lambda: &[f64], k: usize) -> Result<f64> {
    check_positive(lambda)?;
    if k == 0 {
        return invalid("bias order must be at least 1");
    }
    let (d1m, d2m) = (dims.d1m() as f64, dims.d2m() as f64);
    let diff = d1m - d2m;
    let d_star = dims.d_star() as f64;
    let per_lambda = lambda.iter().rev().map(|&l| {
        let l2 = l * l;
        let (q1, q2) = (d1m / l2, d2m / l2);
        let mut corr = Vec::with_capacity(k.saturating_sub(1));
        let (mut p1, mut p2) = (1.0, 1.0);
        for k0 in 2..=k {
            p1 *= q1;
            p2 *= q2;
            let sign = if k0 % 2 == 0 { 1.0 } else { -1.0 };
            corr.push(sign * diff * (p1 - p2));
        }
        (d_star - compensated_sum(corr.into_iter())) / l2
    });
    Ok(2.0 * compensated_sum(per_lambda))
}

/// `B_∞ = 2 Σ_j λ_j^{-2} ( d1m (λ_j²+d2m)/(λ_j²+d1m) + d2m (λ_j²+d1m)/(λ_j²+d2m) )`.
pub fn bias_infinity(dims: Dims, lambda: &[f64]) -> Result<f64> {
    check_positive(lambda)?;
    let (d1m, d2m) = (dims.d1m() as f64, dims.d2m() as f64);
    let terms = lambda.iter().rev().map(|&l| {
        let l2 = l * l;
        (d1m * ((l2 + d2m) / (l2 + d1m)) + d2m * ((l2 + d1m) / (l2 + d2m))) / l2
    });
    Ok(2.0 * compensated_sum(terms))
}

pub fn bias(dims: Dims, lambda: &[f64], order: BiasOrder) -> Result<f64> {
    match order {
        BiasOrder::Finite(k) => bias_k(dims, lambda, k),
        BiasOrder::Infinite => bias_infinity(dims, lambda),
    }
}

/// `σ = √(8 d⋆) ‖Λ^{-2}‖_F`.
pub fn sigma_normalizer(dims: Dims, lambda: &[f64]) -> Result<f64> {
    check_positive(lambda)?;
    Ok((8.0 * dims.d_star() as f64).sqrt() * inv_power_norm2(lambda, 2).sqrt())
}

/// Inverts `λ̂² ≈ λ² + (d1+d2) + d1d2/λ²` for the larger root:
/// `λ̃² = (λ̂² − (d1+d2))/2 + √((λ̂² − (d1+d2))² − 4d1d2)/2`.
///
/// Below the detectability edge `λ̂ < √d1 + √d2` there is no admissible root;
/// the entry keeps `λ̂` and is flagged invalid.
pub fn shrink_singular_values(dims: Dims, lambda_hat: &[f64]) -> SingularValueEstimate {
    let (d1, d2) = (dims.d1() as f64, dims.d2() as f64);
    let two_sqrt_p = 2.0 * (d1 * d2).sqrt();
    let mut values = Vec::with_capacity(lambda_hat.len());
    let mut valid = Vec::with_capacity(lambda_hat.len());
    for &lh in lambda_hat {
        let a = lh * lh - (d1 + d2);
        let disc = (a - two_sqrt_p) * (a + two_sqrt_p);
        if a >= 0.0 && disc >= 0.0 && lh.is_finite() {
            values.push(((a + disc.sqrt()) / 2.0).sqrt());
            valid.push(true);
        } else {
            values.push(lh);
            valid.push(false);
        }
    }
    SingularValueEstimate {
        kind: LambdaKind::Shrunk,
        values,
        valid,
    }
}

/// Noiseless fixed point `√(λ² + (d1+d2) + d1d2/λ²)` of the empirical singular value.
pub fn inflate_singular_value(dims: Dims, lambda: f64) -> f64 {
    let (d1, d2) = (dims.d1() as f64, dims.d2() as f64);
    let l2 = lambda * lambda;
    (l2 + (d1 + d2) + d1 * d2 / l2).sqrt()
}

/// `B_1 … B_K`, `B_∞` and `σ` for one set of singular values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasLadder {
    pub dims: Dims,
    pub lambda: SingularValueEstimate,
    /// `orders[k-1] = B_k`
    pub orders: Vec<f64>,
    pub b_infinity: f64,
    pub sigma: f64,
}

impl BiasLadder {
    pub fn new(dims: Dims, lambda: SingularValueEstimate, k_max: usize) -> Result<Self> {
        let orders = (1..=k_max)
            .map(|k| bias_k(dims, &lambda.values, k))
            .collect::<Result<Vec<_>>>()?;
        let b_infinity = bias_infinity(dims, &lambda.values)?;
        let sigma = sigma_normalizer(dims, &lambda.values)?;
        Ok(Self {
            dims,
            lambda,
            orders,
            b_infinity,
            sigma,
        })
    }

    pub fn get(&self, order: BiasOrder) -> Option<f64> {
        match order {
            BiasOrder::Finite(k) => self.orders.get(k.checked_sub(1)?).copied(),
            BiasOrder::Infinite => Some(self.b_infinity),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(d1: usize, d2: usize, r: usize) -> Dims {
        Dims::new(d1, d2, r).unwrap()
    }

    #[test]
    fn square_case_is_flat() {
        let d = dims(100, 100, 1);
        for k in 1..=10 {
            let b = bias_k(d, &[10.0], k).unwrap();
            assert!((b - 3.96).abs() < 1e-14, "k={k}: {b}");
        }
        assert!((bias_infinity(d, &[10.0]).unwrap() - 3.96).abs() < 1e-14);
    }

    #[test]
    fn second_order_closed_form() {
        let d = dims(100, 600, 6);
        let lambda = crate::model::geometric_profile(6, 50.0);
        let b2 = bias_k(d, &lambda, 2).unwrap();
        let delta = d.delta_d() as f64;
        let expected =
            2.0 * (d.d_star() as f64 * inv_power_norm2(&lambda, 1) - delta * delta * inv_power_norm2(&lambda, 2));
        assert!((b2 - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn third_and_fourth_order_closed_forms() {
        // B₃ and B₄ written out with d⋆ and Δ_d.
        let d = dims(100, 600, 6);
        let lambda = crate::model::geometric_profile(6, 50.0);
        let (ds, dd) = (d.d_star() as f64, d.delta_d() as f64);
        let (d1m, d2m) = (d.d1m() as f64, d.d2m() as f64);
        let n = |k| inv_power_norm2(&lambda, k);
        let b3 = 2.0 * (ds * n(1) - dd * dd * n(2) + ds * dd * dd * n(3));
        let b4 = b3 - 2.0 * (d1m.powi(3) - d2m.powi(3)) * dd * n(4);
        assert!((bias_k(d, &lambda, 3).unwrap() - b3).abs() <= 1e-12 * b3);
        assert!((bias_k(d, &lambda, 4).unwrap() - b4).abs() <= 1e-12 * b4);
    }

    #[test]
    fn b_infinity_reference_value() {
        // r = 1, λ² = 400, d1m = 49, d2m = 149; reference from 50-digit arithmetic.
        let d = dims(50, 150, 1);
        let b = bias_infinity(d, &[20.0]).unwrap();
        assert!((b - 0.908_864_426_513_482_7).abs() < 1e-15, "{b}");
    }

    #[test]
    fn ladder_converges_to_b_infinity() {
        let d = dims(60, 200, 3);
        let lr = (10.0 * 200f64).sqrt();
        let lambda = [4.0 * lr, 2.0 * lr, lr];
        let binf = bias_infinity(d, &lambda).unwrap();
        let b40 = bias_k(d, &lambda, 40).unwrap();
        assert!(((b40 - binf) / binf).abs() < 1e-8);
        for ratio in [0.1f64, 0.3, 0.5] {
            let lr = (200.0 / ratio).sqrt();
            let lambda = [3.0 * lr, lr];
            let d = dims(60, 200, 2);
            let binf = bias_infinity(d, &lambda).unwrap();
            let b60 = bias_k(d, &lambda, 60).unwrap();
            assert!(((b60 - binf) / binf).abs() < 1e-10, "ratio {ratio}");
        }
    }

    #[test]
    fn corrections_decay_geometrically() {
        let d = dims(80, 300, 2);
        let lr = 2.0 * 300f64.sqrt();
        let lambda = [2.0 * lr, lr];
        let b: Vec<f64> = (1..=12).map(|k| bias_k(d, &lambda, k).unwrap()).collect();
        for k in 3..11 {
            assert!((b[k] - b[k - 1]).abs() <= (b[k - 1] - b[k - 2]).abs());
        }
    }

    #[test]
    fn sigma_examples() {
        let s = sigma_normalizer(dims(51, 51, 1), &[1.0]).unwrap();
        assert!((s - 800f64.sqrt()).abs() < 1e-12);
        let s = sigma_normalizer(dims(51, 51, 1), &[3.0]).unwrap();
        assert!((s - 800f64.sqrt() / 9.0).abs() < 1e-12);
        let s = sigma_normalizer(dims(52, 52, 2), &[2.0, 1.0]).unwrap();
        assert!((s - 29.154_759_474_226_502).abs() < 1e-12, "{s}");
    }

    #[test]
    fn shrinkage_inverts_noiseless_inflation() {
        let d = dims(50, 50, 1);
        let lh = inflate_singular_value(d, 10.0);
        assert!((lh * lh - 225.0).abs() < 1e-12);
        let est = shrink_singular_values(d, &[lh]);
        assert!(est.valid[0]);
        assert!((est.values[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn shrinkage_flags_below_edge() {
        let d = dims(50, 50, 2);
        let edge = 2.0 * 50f64.sqrt();
        let est = shrink_singular_values(d, &[edge * 1.01, edge * 0.99, 0.0]);
        assert_eq!(est.valid, vec![true, false, false]);
        assert_eq!(est.values[1], edge * 0.99);
        assert!(est.values.iter().all(|v| v.is_finite()));
        assert_eq!(est.failures(), 2);
    }

    #[test]
    fn ladder_struct() {
        let d = dims(30, 50, 2);
        let lad = BiasLadder::new(d, SingularValueEstimate::exact(LambdaKind::True, vec![20.0, 10.0]), 4).unwrap();
        assert_eq!(
            lad.get(BiasOrder::Finite(2)),
            Some(bias_k(d, &[20.0, 10.0], 2).unwrap())
        );
        assert_eq!(lad.get(BiasOrder::Finite(5)), None);
        assert_eq!(lad.get(BiasOrder::Infinite), Some(lad.b_infinity));
        assert!(lad.sigma > 0.0);
    }

    #[test]
    fn order_parsing() {
        assert_eq!("inf".parse::<BiasOrder>().unwrap(), BiasOrder::Infinite);
        assert_eq!("3".parse::<BiasOrder>().unwrap(), BiasOrder::Finite(3));
        assert!("0".parse::<BiasOrder>().is_err());
        assert_eq!("shrunk".parse::<LambdaKind>().unwrap(), LambdaKind::Shrunk);
    }

    proptest! {
        #[test]
        fn swapping_dimensions_is_neutral(d1 in 5usize..300, d2 in 5usize..300, base in 1.0f64..100.0, k in 1usize..12) {
            let lambda = [4.0 * base, 2.0 * base, base];
            let a = dims(d1, d2, 3);
            let b = dims(d2, d1, 3);
            prop_assert_eq!(bias_k(a, &lambda, k).unwrap(), bias_k(b, &lambda, k).unwrap());
            let (ia, ib) = (bias_infinity(a, &lambda).unwrap(), bias_infinity(b, &lambda).unwrap());
            prop_assert!((ia - ib).abs() <= 1e-14 * ia);
        }

        #[test]
        fn square_dimensions_collapse(d in 5usize..500, base in 0.5f64..200.0, k in 1usize..60) {
            let lambda = [2.0 * base, base];
            let dm = dims(d, d, 2);
            prop_assert_eq!(bias_k(dm, &lambda, k).unwrap(), bias_k(dm, &lambda, 1).unwrap());
        }

        #[test]
        fn shrink_round_trip(d1 in 5usize..400, d2 in 5usize..400, mult in 1.0f64..100.0) {
            let dm = dims(d1, d2, 1);
            let lambda = (mult * d1.max(d2) as f64).sqrt();
            let est = shrink_singular_values(dm, &[inflate_singular_value(dm, lambda)]);
            prop_assert!(est.valid[0]);
            prop_assert!(((est.values[0] - lambda) / lambda).abs() < 1e-9);
        }
    }
}
