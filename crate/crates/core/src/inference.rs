//! Projection distance, the normalized statistic and confidence regions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bias::{bias, sigma_normalizer, BiasOrder, LambdaKind, SingularValueEstimate};
use crate::error::{invalid, Result};
use crate::model::Dims;
use crate::normal::upper_critical;

/// `‖U₁U₁ᵀ − U₂U₂ᵀ‖_F² + ‖V₁V₁ᵀ − V₂V₂ᵀ‖_F²` via `4r − 2‖U₁ᵀU₂‖_F² − 2‖V₁ᵀV₂‖_F²`.
///
/// Inputs are assumed to have orthonormal columns; the result is clamped to `[0, 4r]`.
pub fn projection_distance2(u1: &DMatrix<f64>, v1: &DMatrix<f64>, u2: &DMatrix<f64>, v2: &DMatrix<f64>) -> Result<f64> {
    let r = u1.ncols();
    if u2.ncols() != r || v1.ncols() != r || v2.ncols() != r {
        return invalid("all bases must have the same number of columns");
    }
    if u1.nrows() != u2.nrows() || v1.nrows() != v2.nrows() {
        return invalid(format!(
            "row mismatch: U {} vs {}, V {} vs {}",
            u1.nrows(),
            u2.nrows(),
            v1.nrows(),
            v2.nrows()
        ));
    }
    let gu = (u1.transpose() * u2).norm_squared();
    let gv = (v1.transpose() * v2).norm_squared();
    let four_r = 4.0 * r as f64;
    Ok((four_r - 2.0 * gu - 2.0 * gv).clamp(0.0, four_r))
}

/// `(dist² − B) / σ` with `B` and `σ` built from a chosen set of singular values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltStatistic {
    pub dist2: f64,
    pub bias: f64,
    pub sigma: f64,
    pub value: f64,
    pub bias_order: BiasOrder,
    pub lambda_kind: LambdaKind,
    /// Set when some shrunk singular values fell back to their empirical value.
    pub degraded: bool,
}

pub fn clt_statistic(dist2: f64, dims: Dims, lambda: &SingularValueEstimate, order: BiasOrder) -> Result<CltStatistic> {
    let b = bias(dims, &lambda.values, order)?;
    let sigma = sigma_normalizer(dims, &lambda.values)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return invalid(format!("normalizer must be positive and finite, got {sigma}"));
    }
    Ok(CltStatistic {
        dist2,
        bias: b,
        sigma,
        value: (dist2 - b) / sigma,
        bias_order: order,
        lambda_kind: lambda.kind,
        degraded: !lambda.all_valid(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRegionSpec {
    pub alpha: f64,
    pub bias_order: BiasOrder,
}

impl ConfidenceRegionSpec {
    pub fn new(alpha: f64, bias_order: BiasOrder) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("alpha {alpha} outside (0, 1)"));
        }
        Ok(Self { alpha, bias_order })
    }

    /// Bias order `ceil(ln d_max)`.
    pub fn with_default_order(alpha: f64, dims: Dims) -> Result<Self> {
        Self::new(alpha, BiasOrder::Finite(dims.default_order()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMembership {
    pub contains: bool,
    /// `radius − |dist² − B|`; non-negative exactly when contained.
    pub margin: f64,
    pub deviation: f64,
    pub radius: f64,
}

/// Whether `(L, R)` lies in `{ |dist²[(L,R),(Û,V̂)] − B| ≤ √(8d⋆) z_{α/2} ‖Λ^{-2}‖_F }`.
pub fn confidence_region_contains(
    candidate: (&DMatrix<f64>, &DMatrix<f64>),
    center: (&DMatrix<f64>, &DMatrix<f64>),
    dims: Dims,
    lambda: &SingularValueEstimate,
    spec: &ConfidenceRegionSpec,
) -> Result<RegionMembership> {
    let dist2 = projection_distance2(candidate.0, candidate.1, center.0, center.1)?;
    let b = bias(dims, &lambda.values, spec.bias_order)?;
    let radius = sigma_normalizer(dims, &lambda.values)? * upper_critical(spec.alpha / 2.0)?;
    let deviation = dist2 - b;
    let margin = radius - deviation.abs();
    Ok(RegionMembership {
        contains: margin >= 0.0,
        margin,
        deviation,
        radius,
    })
}
