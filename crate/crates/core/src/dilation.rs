//! Symmetric dilation of a rectangular low-rank model and its spectral projectors.
//!
//! For `M = UΛVᵀ` the dilation `A = [[0, M], [Mᵀ, 0]]` has eigenpairs
//! `±λᵢ` with eigenvectors `θ±ᵢ = (uᵢ; ±vᵢ)/√2`. Every operator here is applied
//! block-wise through `U` and `V`; neither `Θ⊥` nor any `(d1+d2)²` projector is
//! ever formed unless a caller asks for a dense copy.

use nalgebra::{DMatrix, DMatrixView};

use crate::model::{Dims, EmpiricalSvd, LowRankModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricDilation {
    pub dims: Dims,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    lambda: Vec<f64>,
}

/// `𝔓^{-k}` for `k ≥ 1`, or `𝔓^⊥` (written `𝔓⁰`) for `k = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjPower(pub usize);

impl SymmetricDilation {
    pub fn from_model(model: &LowRankModel) -> Self {
        Self {
            dims: model.dims,
            u: model.u.clone(),
            v: model.v.clone(),
            lambda: model.lambda.clone(),
        }
    }

    pub fn from_empirical(dims: Dims, svd: &EmpiricalSvd) -> Self {
        Self {
            dims,
            u: svd.u_hat.clone(),
            v: svd.v_hat.clone(),
            lambda: svd.lambda_hat.clone(),
        }
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }
    pub fn lambda_r(&self) -> f64 {
        *self.lambda.last().expect("rank is at least one")
    }

    /// Eigenvalues in the order of the columns of [`theta`](Self::theta):
    /// `λ₁ … λ_r, −λ_r … −λ₁`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut out = self.lambda.clone();
        out.extend(self.lambda.iter().rev().map(|l| -l));
        out
    }

    /// `Θ = (θ₁ … θ_r, θ₋_r … θ₋₁)`, an `(d1+d2) × 2r` orthonormal matrix.
    pub fn theta(&self) -> DMatrix<f64> {
        let (d1, d2, r) = (self.dims.d1(), self.dims.d2(), self.dims.r());
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut theta = DMatrix::zeros(d1 + d2, 2 * r);
        for i in 0..r {
            let neg = 2 * r - 1 - i;
            for row in 0..d1 {
                theta[(row, i)] = s * self.u[(row, i)];
                theta[(row, neg)] = s * self.u[(row, i)];
            }
            for row in 0..d2 {
                theta[(d1 + row, i)] = s * self.v[(row, i)];
                theta[(d1 + row, neg)] = -s * self.v[(row, i)];
            }
        }
        theta
    }

    /// Dense `A = [[0, M], [Mᵀ, 0]]`.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut ul = self.u.clone();
        for (j, &l) in self.lambda.iter().enumerate() {
            ul.column_mut(j).scale_mut(l);
        }
        dilate_rect(&(ul * self.v.transpose()))
    }

    /// Applies `𝔓^{-k}` (or `𝔓^⊥` for `k = 0`) to every column of `block`.
    pub fn apply(&self, op: ProjPower, block: &DMatrix<f64>) -> DMatrix<f64> {
        let d1 = self.dims.d1();
        let (top, bot) = split(block, d1);
        let mut out = DMatrix::zeros(block.nrows(), block.ncols());
        match op.0 {
            0 => {
                let pu = &self.u * (self.u.transpose() * top);
                let pv = &self.v * (self.v.transpose() * bot);
                out.rows_mut(0, d1).copy_from(&(top - pu));
                out.rows_mut(d1, self.dims.d2()).copy_from(&(bot - pv));
            }
            k => {
                let w: Vec<f64> = self.lambda.iter().map(|l| l.powi(-(k as i32))).collect();
                // odd k: [U Λ^{-k} Vᵀ bot; V Λ^{-k} Uᵀ top], even k: [U Λ^{-k} Uᵀ top; V Λ^{-k} Vᵀ bot]
                let (ct_basis, ct_src, cb_basis, cb_src) = if k % 2 == 1 {
                    (&self.v, bot, &self.u, top)
                } else {
                    (&self.u, top, &self.v, bot)
                };
                let mut ct = ct_basis.transpose() * ct_src;
                let mut cb = cb_basis.transpose() * cb_src;
                for (i, wi) in w.iter().enumerate() {
                    ct.row_mut(i).scale_mut(*wi);
                    cb.row_mut(i).scale_mut(*wi);
                }
                out.rows_mut(0, d1).copy_from(&(&self.u * ct));
                out.rows_mut(d1, self.dims.d2()).copy_from(&(&self.v * cb));
            }
        }
        out
    }

    /// Dense `(d1+d2)²` copy of `𝔓^{-k}` / `𝔓^⊥`.
    pub fn proj_power(&self, k: usize) -> DMatrix<f64> {
        self.apply(ProjPower(k), &DMatrix::identity(self.dims.n(), self.dims.n()))
    }
}

/// `X = [[0, Z], [Zᵀ, 0]]` applied to `block` without forming `X`.
pub fn apply_dilated_noise(z: &DMatrix<f64>, block: &DMatrix<f64>) -> DMatrix<f64> {
    let (d1, d2) = z.shape();
    let (top, bot) = split(block, d1);
    let mut out = DMatrix::zeros(block.nrows(), block.ncols());
    out.rows_mut(0, d1).copy_from(&(z * bot));
    out.rows_mut(d1, d2).copy_from(&(z.transpose() * top));
    out
}

/// Dense symmetric dilation of a rectangular matrix.
pub fn dilate_rect(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (d1, d2) = m.shape();
    let mut a = DMatrix::zeros(d1 + d2, d1 + d2);
    a.view_mut((0, d1), (d1, d2)).copy_from(m);
    a.view_mut((d1, 0), (d2, d1)).copy_from(&m.transpose());
    a
}

fn split(block: &DMatrix<f64>, d1: usize) -> (DMatrixView<'_, f64>, DMatrixView<'_, f64>) {
    let n = block.nrows();
    (block.rows(0, d1), block.rows(d1, n - d1))
}
