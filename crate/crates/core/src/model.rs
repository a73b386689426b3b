//! Ground-truth low-rank models, Gaussian noise and the top-r SVD.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{NoiseSpec, NormalStream, ORIENTATION_STREAM};

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

/// Matrix dimensions `d1 × d2` together with the signal rank `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    d1: usize,
    d2: usize,
    r: usize,
}

impl Dims {
    pub fn new(d1: usize, d2: usize, r: usize) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return invalid(format!("dimensions must be positive, got {d1}x{d2}"));
        }
        if r == 0 || r > d1.min(d2) {
            return invalid(format!("rank {r} must lie in 1..={}", d1.min(d2)));
        }
        Ok(Self { d1, d2, r })
    }

    pub fn d1(&self) -> usize {
        self.d1
    }
    pub fn d2(&self) -> usize {
        self.d2
    }
    pub fn r(&self) -> usize {
        self.r
    }
    pub fn d_max(&self) -> usize {
        self.d1.max(self.d2)
    }
    /// `d1 + d2 - 2r`
    pub fn d_star(&self) -> usize {
        self.d1 + self.d2 - 2 * self.r
    }
    pub fn d1m(&self) -> usize {
        self.d1 - self.r
    }
    pub fn d2m(&self) -> usize {
        self.d2 - self.r
    }
    pub fn delta_d(&self) -> i64 {
        self.d1 as i64 - self.d2 as i64
    }
    /// Size of the symmetric dilation, `d1 + d2`.
    pub fn n(&self) -> usize {
        self.d1 + self.d2
    }
    /// Default truncation depth `ceil(ln d_max)`, at least 1.
    pub fn default_order(&self) -> usize {
        ((self.d_max() as f64).ln().ceil() as usize).max(1)
    }
}

/// `M = U diag(lambda) Vᵀ` with orthonormal `U`, `V` and non-increasing positive `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankModel {
    pub dims: Dims,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub lambda: Vec<f64>,
}

impl LowRankModel {
    /// Builds a model from explicit factors. Columns of `u` and `v` must be orthonormal.
    pub fn from_parts(u: DMatrix<f64>, v: DMatrix<f64>, lambda: Vec<f64>) -> Result<Self> {
        let dims = Dims::new(u.nrows(), v.nrows(), lambda.len())?;
        if u.ncols() != dims.r || v.ncols() != dims.r {
            return invalid("factor column counts must equal the rank");
        }
        check_lambda(&lambda)?;
        for (name, q) in [("U", &u), ("V", &v)] {
            let gram = q.transpose() * q;
            let dev = (gram - DMatrix::identity(dims.r, dims.r)).amax();
            if dev > 1e-10 {
                return invalid(format!("{name} is not orthonormal (max deviation {dev:e})"));
            }
        }
        Ok(Self { dims, u, v, lambda })
    }

    pub fn signal(&self) -> DMatrix<f64> {
        let mut ul = self.u.clone();
        for (j, &l) in self.lambda.iter().enumerate() {
            ul.column_mut(j).scale_mut(l);
        }
        ul * self.v.transpose()
    }

    pub fn lambda_r(&self) -> f64 {
        *self.lambda.last().expect("rank is at least one")
    }
}

/// The observed matrix `M̂ = M + Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrix(pub DMatrix<f64>);

impl ObservedMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("observed matrix has non-finite entries");
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Top-r singular triplets of an observed matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSvd {
    pub u_hat: DMatrix<f64>,
    pub v_hat: DMatrix<f64>,
    pub lambda_hat: Vec<f64>,
}

fn check_lambda(lambda: &[f64]) -> Result<()> {
    if lambda.is_empty() {
        return invalid("lambda must be non-empty");
    }
    if lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return invalid("lambda entries must be positive and finite");
    }
    if lambda.windows(2).any(|w| w[1] > w[0]) {
        return invalid("lambda must be sorted non-increasing");
    }
    Ok(())
}

/// `d1 × d2` matrix of i.i.d. `N(0, sigma²)` entries, filled in column-major order.
pub fn sample_noise(dims: Dims, spec: NoiseSpec) -> DMatrix<f64> {
    let mut stream = NormalStream::new(spec.seed, spec.stream);
    let mut z = DMatrix::zeros(dims.d1, dims.d2);
    stream.fill_normal(z.as_mut_slice());
    if spec.sigma != 1.0 {
        z *= spec.sigma;
    }
    z
}

/// Draws `U`, `V` as the top-r singular subspaces of a seeded Gaussian `d1 × d2` matrix.
pub fn make_model(dims: Dims, lambda: &[f64], orientation_seed: u64) -> Result<LowRankModel> {
    if lambda.len() != dims.r {
        return invalid(format!("expected {} singular values, got {}", dims.r, lambda.len()));
    }
    check_lambda(lambda)?;
    let g = sample_noise(dims, NoiseSpec::new(orientation_seed, ORIENTATION_STREAM));
    let svd = top_r_svd(&ObservedMatrix(g), dims.r)?;
    Ok(LowRankModel {
        dims,
        u: svd.u_hat,
        v: svd.v_hat,
        lambda: lambda.to_vec(),
    })
}

/// Singular values `λᵢ = 2^{r-i} λ` for `i = 1..=r`.
pub fn geometric_profile(r: usize, base: f64) -> Vec<f64> {
    (1..=r).map(|i| base * 2f64.powi((r - i) as i32)).collect()
}

pub fn observe(model: &LowRankModel, noise: &DMatrix<f64>) -> Result<ObservedMatrix> {
    if noise.shape() != (model.dims.d1, model.dims.d2) {
        return invalid(format!(
            "noise shape {:?} does not match model {}x{}",
            noise.shape(),
            model.dims.d1,
            model.dims.d2
        ));
    }
    ObservedMatrix::new(model.signal() + noise)
}

/// Top-r SVD. Singular values come back non-increasing.
pub fn top_r_svd(mhat: &ObservedMatrix, r: usize) -> Result<EmpiricalSvd> {
    let m = mhat.values();
    let (d1, d2) = m.shape();
    if r == 0 || r > d1.min(d2) {
        return invalid(format!("rank {r} must lie in 1..={}", d1.min(d2)));
    }
    let svd = SVD::try_new(m.clone(), true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure(format!("SVD of {d1}x{d2} matrix did not converge")))?;
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let sv: &DVector<f64> = &svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let top = &order[..r];

    let u_hat = DMatrix::from_fn(d1, r, |i, j| u[(i, top[j])]);
    let v_hat = DMatrix::from_fn(d2, r, |i, j| vt[(top[j], i)]);
    let lambda_hat = top.iter().map(|&k| sv[k]).collect();
    Ok(EmpiricalSvd {
        u_hat,
        v_hat,
        lambda_hat,
    })
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    let svd = nalgebra::SVD::try_new(m.clone(), false, false, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("singular values did not converge".into()))?;
    Ok(svd.singular_values.max())
}
