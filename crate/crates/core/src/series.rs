//! Exact perturbation series of the empirical spectral projector.
//!
//! For symmetric `A` of rank `2r` and a perturbation `X` with `‖X‖ < λ_r / 2`,
//!
//! ```text
//! Θ̂Θ̂ᵀ − ΘΘᵀ = Σ_{k≥1} S_k(X),
//! S_k(X) = Σ_{s₁+…+s_{k+1}=k} (−1)^{1+τ(s)} 𝔓^{-s₁} X 𝔓^{-s₂} X ⋯ X 𝔓^{-s_{k+1}},
//! ```
//!
//! where `τ(s)` counts the positive entries of `s` and `𝔓⁰ = 𝔓^⊥`.
//!
//! The sign factorizes over the parts: writing `Q₀ = 𝔓^⊥` and `Q_s = −𝔓^{-s}`
//! for `s > 0` gives `S_k = −Σ_s Q_{s₁} X Q_{s₂} ⋯ X Q_{s_{k+1}}`, which is
//! evaluated by dynamic programming over (number of factors, exponent used).
//! [`eval_s_k_by_enumeration`] walks the compositions one at a time instead
//! and serves as an independent check of the recursion.

use nalgebra::DMatrix;

use crate::dilation::{apply_dilated_noise, ProjPower, SymmetricDilation};
use crate::error::{invalid, Error, Result};
use crate::model::spectral_norm;

/// Largest order accepted by [`enumerate_compositions`].
pub const MAX_ENUMERATION_ORDER: usize = 30;
/// Largest order accepted by the evaluation routines.
pub const MAX_EVALUATION_ORDER: usize = 12;

/// A weak composition `(s₁, …, s_{k+1})` of `k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Composition {
    parts: Vec<usize>,
}

impl Composition {
    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn order(&self) -> usize {
        self.parts.len() - 1
    }

    /// Number of strictly positive parts.
    pub fn tau(&self) -> usize {
        self.parts.iter().filter(|&&s| s > 0).count()
    }

    /// `(−1)^{1+τ(s)}`
    pub fn sign(&self) -> i8 {
        if self.tau() % 2 == 1 {
            1
        } else {
            -1
        }
    }
}

/// Weak compositions of `k` into `k + 1` parts in descending lexicographic
/// order, starting from `(k, 0, …, 0)`.
#[derive(Debug, Clone)]
pub struct Compositions {
    next: Option<Vec<usize>>,
}

impl Iterator for Compositions {
    type Item = Composition;

    fn next(&mut self) -> Option<Composition> {
        let current = self.next.take()?;
        let last = current.len() - 1;
        if let Some(i) = (0..last).rev().find(|&i| current[i] > 0) {
            let mut succ = current.clone();
            let rest: usize = succ[i + 1..].iter().sum();
            succ[i] -= 1;
            succ[i + 1] = rest + 1;
            succ[i + 2..].iter_mut().for_each(|s| *s = 0);
            self.next = Some(succ);
        }
        Some(Composition { parts: current })
    }
}

pub fn enumerate_compositions(k: usize) -> Result<Compositions> {
    if k == 0 || k > MAX_ENUMERATION_ORDER {
        return invalid(format!("order {k} outside 1..={MAX_ENUMERATION_ORDER}"));
    }
    let mut first = vec![0; k + 1];
    first[0] = k;
    Ok(Compositions { next: Some(first) })
}

/// `C(2k, k)`, the number of terms in `S_k`.
pub fn composition_count(k: usize) -> u64 {
    (1..=k as u64).fold(1u64, |acc, i| acc * (k as u64 + i) / i)
}

/// Verifies `‖X‖ = ‖Z‖ < λ_r / 2` and returns `‖Z‖`.
pub fn check_snr(dil: &SymmetricDilation, z: &DMatrix<f64>) -> Result<f64> {
    if z.shape() != (dil.dims.d1(), dil.dims.d2()) {
        return invalid(format!("noise shape {:?} does not match dilation", z.shape()));
    }
    let noise_norm = spectral_norm(z)?;
    let lambda_r = dil.lambda_r();
    if noise_norm >= lambda_r / 2.0 {
        return Err(Error::PreconditionViolation { noise_norm, lambda_r });
    }
    Ok(noise_norm)
}

fn check_order(k: usize) -> Result<()> {
    if k == 0 || k > MAX_EVALUATION_ORDER {
        return invalid(format!("order {k} outside 1..={MAX_EVALUATION_ORDER}"));
    }
    Ok(())
}

/// `Q_s B`: `𝔓^⊥ B` for `s = 0`, `−𝔓^{-s} B` otherwise.
fn signed_power(dil: &SymmetricDilation, s: usize, block: &DMatrix<f64>) -> DMatrix<f64> {
    let out = dil.apply(ProjPower(s), block);
    if s == 0 {
        out
    } else {
        -out
    }
}

/// `[S_1(X) B, …, S_K(X) B]` without forming any `(d1+d2)²` intermediate
/// unless `block` itself is square. Skips the SNR gate.
pub fn series_apply_unchecked(
    dil: &SymmetricDilation,
    z: &DMatrix<f64>,
    k_max: usize,
    block: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    // level[j] holds T[m][j] = Σ_{|s|=j, len m} Q_{s₁} X ⋯ X Q_{s_m} B.
    let mut level: Vec<DMatrix<f64>> = (0..=k_max).map(|j| signed_power(dil, j, block)).collect();
    let mut out = Vec::with_capacity(k_max);
    for m in 2..=k_max + 1 {
        let x_level: Vec<DMatrix<f64>> = level.iter().map(|t| apply_dilated_noise(z, t)).collect();
        let j_range = if m == k_max + 1 { k_max..=k_max } else { 0..=k_max };
        let mut next = vec![DMatrix::zeros(0, 0); k_max + 1];
        for j in j_range {
            let mut acc = DMatrix::zeros(block.nrows(), block.ncols());
            for s in 0..=j {
                acc += signed_power(dil, s, &x_level[j - s]);
            }
            next[j] = acc;
        }
        out.push(-&next[m - 1]);
        level = next;
    }
    out
}

/// `[S_1(X) B, …, S_K(X) B]` after checking the SNR gate.
pub fn series_apply(
    dil: &SymmetricDilation,
    z: &DMatrix<f64>,
    k_max: usize,
    block: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    check_order(k_max)?;
    check_snr(dil, z)?;
    if block.nrows() != dil.dims.n() {
        return invalid("block row count must equal d1 + d2");
    }
    Ok(series_apply_unchecked(dil, z, k_max, block))
}

/// Dense `S_k(X)`.
pub fn eval_s_k(dil: &SymmetricDilation, z: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let id = DMatrix::identity(dil.dims.n(), dil.dims.n());
    Ok(series_apply(dil, z, k, &id)?.pop().expect("k >= 1"))
}

/// One term `𝔓^{-s₁} X ⋯ X 𝔓^{-s_{k+1}} B`, applied right to left.
pub fn eval_term(dil: &SymmetricDilation, z: &DMatrix<f64>, comp: &Composition, block: &DMatrix<f64>) -> DMatrix<f64> {
    let mut parts = comp.parts().iter().rev();
    let first = *parts.next().expect("non-empty composition");
    let mut acc = dil.apply(ProjPower(first), block);
    for &s in parts {
        acc = dil.apply(ProjPower(s), &apply_dilated_noise(z, &acc));
    }
    acc
}

/// Dense `S_k(X)` summed term by term in enumeration order.
pub fn eval_s_k_by_enumeration(dil: &SymmetricDilation, z: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    check_order(k)?;
    check_snr(dil, z)?;
    let id = DMatrix::identity(dil.dims.n(), dil.dims.n());
    let mut acc = DMatrix::zeros(dil.dims.n(), dil.dims.n());
    for comp in enumerate_compositions(k)? {
        let term = eval_term(dil, z, &comp, &id);
        if comp.sign() > 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    Ok(acc)
}

/// `q^{K+1} / (1 − q)`, the tail `Σ_{k>K} q^k` of a geometric series.
pub fn geometric_tail(q: f64, k_max: usize) -> f64 {
    if q >= 1.0 {
        f64::INFINITY
    } else {
        q.powi(k_max as i32 + 1) / (1.0 - q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSeries {
    /// `Σ_{k=1}^{K} S_k(X)`
    pub delta: DMatrix<f64>,
    pub noise_norm: f64,
    /// Operator-norm bound `Σ_{k>K} (4‖X‖/λ_r)^k` on the truncation error.
    pub tail_bound: f64,
}

pub fn truncated_projector_delta(dil: &SymmetricDilation, z: &DMatrix<f64>, k_max: usize) -> Result<TruncatedSeries> {
    check_order(k_max)?;
    let noise_norm = check_snr(dil, z)?;
    let n = dil.dims.n();
    let terms = series_apply_unchecked(dil, z, k_max, &DMatrix::identity(n, n));
    let mut delta = DMatrix::zeros(n, n);
    for t in &terms {
        delta += t;
    }
    Ok(TruncatedSeries {
        delta,
        noise_norm,
        tail_bound: geometric_tail(4.0 * noise_norm / dil.lambda_r(), k_max),
    })
}

/// `dist² ≈ leading + tail` with `leading = 2‖𝔓^⊥X𝔓^{-1}‖_F²` and
/// `tail = −2 Σ_{k=3}^{K} ⟨ΘΘᵀ, S_k(X)⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dist2Decomposition {
    pub leading: f64,
    pub tail: f64,
    /// `4r Σ_{k>K} (4‖X‖/λ_r)^k`
    pub tail_bound: f64,
}

impl Dist2Decomposition {
    pub fn total(&self) -> f64 {
        self.leading + self.tail
    }
}

/// `2‖𝔓^⊥X𝔓^{-1}‖_F²`, computed as `2(‖(I−UUᵀ)ZVΛ^{-1}‖_F² + ‖(I−VVᵀ)ZᵀUΛ^{-1}‖_F²)`.
pub fn leading_term(dil: &SymmetricDilation, z: &DMatrix<f64>) -> f64 {
    let (u, v) = (dil.u(), dil.v());
    let mut zv = z * v;
    let mut ztu = z.transpose() * u;
    for (j, l) in dil.lambda().iter().enumerate() {
        zv.column_mut(j).unscale_mut(*l);
        ztu.column_mut(j).unscale_mut(*l);
    }
    let left = &zv - u * (u.transpose() * &zv);
    let right = &ztu - v * (v.transpose() * &ztu);
    2.0 * (left.norm_squared() + right.norm_squared())
}

pub fn dist2_series_decomposition(
    dil: &SymmetricDilation,
    z: &DMatrix<f64>,
    k_max: usize,
) -> Result<Dist2Decomposition> {
    check_order(k_max)?;
    let noise_norm = check_snr(dil, z)?;
    let leading = leading_term(dil, z);
    let theta = dil.theta();
    let mut tail = 0.0;
    if k_max >= 3 {
        let terms = series_apply_unchecked(dil, z, k_max, &theta);
        for t in &terms[2..] {
            tail -= 2.0 * (theta.transpose() * t).trace();
        }
    }
    let r = dil.dims.r() as f64;
    Ok(Dist2Decomposition {
        leading,
        tail,
        tail_bound: 4.0 * r * geometric_tail(4.0 * noise_norm / dil.lambda_r(), k_max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_model, sample_noise, Dims, LowRankModel};
    use crate::rng::NoiseSpec;

    fn setup(d1: usize, d2: usize, lambda: &[f64], ratio: f64, seed: u64) -> (SymmetricDilation, DMatrix<f64>) {
        let dims = Dims::new(d1, d2, lambda.len()).unwrap();
        let model = make_model(dims, lambda, seed).unwrap();
        let mut z = sample_noise(dims, NoiseSpec::new(seed, 0));
        let scale = ratio * model.lambda_r() / spectral_norm(&z).unwrap();
        z *= scale;
        (SymmetricDilation::from_model(&model), z)
    }

    #[test]
    fn k1_compositions() {
        let c: Vec<_> = enumerate_compositions(1).unwrap().collect();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].parts(), &[1, 0]);
        assert_eq!(c[1].parts(), &[0, 1]);
        assert!(c.iter().all(|c| c.sign() == 1));
    }

    #[test]
    fn k2_compositions_match_displayed_terms() {
        let c: Vec<_> = enumerate_compositions(2).unwrap().collect();
        assert_eq!(c.len(), 6);
        let plus: Vec<_> = c.iter().filter(|c| c.sign() == 1).map(|c| c.parts().to_vec()).collect();
        let minus: Vec<_> = c
            .iter()
            .filter(|c| c.sign() == -1)
            .map(|c| c.parts().to_vec())
            .collect();
        assert_eq!(plus, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
        assert_eq!(minus, vec![vec![1, 1, 0], vec![1, 0, 1], vec![0, 1, 1]]);
    }

    #[test]
    fn counts_are_central_binomials() {
        assert_eq!(enumerate_compositions(5).unwrap().count(), 252);
        for k in 1..=10 {
            let all: Vec<_> = enumerate_compositions(k).unwrap().collect();
            assert_eq!(all.len() as u64, composition_count(k));
            let unique: std::collections::HashSet<_> = all.iter().collect();
            assert_eq!(unique.len(), all.len());
            for c in &all {
                assert_eq!(c.parts().iter().sum::<usize>(), k);
                let positive = c.parts().iter().filter(|&&s| s != 0).count();
                let expected = if (1 + positive) % 2 == 0 { 1 } else { -1 };
                assert_eq!(c.sign(), expected);
            }
        }
        assert_eq!(composition_count(30), 118_264_581_564_861_424);
    }

    #[test]
    fn order_guard() {
        assert!(enumerate_compositions(0).is_err());
        assert!(enumerate_compositions(31).is_err());
        assert!(enumerate_compositions(30).is_ok());
        let (dil, z) = setup(5, 4, &[3.0], 0.1, 1);
        assert!(truncated_projector_delta(&dil, &z, 13).is_err());
    }

    #[test]
    fn snr_gate() {
        let (dil, z) = setup(6, 5, &[2.0, 1.0], 0.6, 2);
        match truncated_projector_delta(&dil, &z, 3) {
            Err(Error::PreconditionViolation { noise_norm, lambda_r }) => {
                assert!((noise_norm - 0.6).abs() < 1e-12);
                assert_eq!(lambda_r, 1.0);
            }
            other => panic!("expected gate failure, got {other:?}"),
        }
    }

    #[test]
    fn zero_noise_gives_zero() {
        let (dil, _) = setup(6, 5, &[2.0, 1.0], 0.1, 3);
        let z = DMatrix::zeros(6, 5);
        for k in 1..=4 {
            assert_eq!(eval_s_k(&dil, &z, k).unwrap().amax(), 0.0);
        }
        let d = dist2_series_decomposition(&dil, &z, 5).unwrap();
        assert_eq!((d.leading, d.tail), (0.0, 0.0));
    }

    #[test]
    fn first_order_hand_example() {
        // u = e₁ ∈ R², v = e₁ ∈ R³, λ = 2; S_1 = 𝔓^{-1}X𝔓^⊥ + 𝔓^⊥X𝔓^{-1} by hand.
        let mut u = DMatrix::zeros(2, 1);
        u[(0, 0)] = 1.0;
        let mut v = DMatrix::zeros(3, 1);
        v[(0, 0)] = 1.0;
        let dil = SymmetricDilation::from_model(&LowRankModel::from_parts(u, v, vec![2.0]).unwrap());
        let z = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, -0.1, 0.3, 0.05, 0.0]);
        // 𝔓^{-1}: entries (0,2),(2,0) = 1/2. 𝔓^⊥ = diag(0,1,0,1,1).
        let mut p1 = DMatrix::<f64>::zeros(5, 5);
        p1[(0, 2)] = 0.5;
        p1[(2, 0)] = 0.5;
        let perp = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0, 1.0]));
        let mut x = DMatrix::zeros(5, 5);
        for i in 0..2 {
            for j in 0..3 {
                x[(i, 2 + j)] = z[(i, j)];
                x[(2 + j, i)] = z[(i, j)];
            }
        }
        let hand = &p1 * &x * &perp + &perp * &x * &p1;
        // Row 0 of 𝔓^{-1}X𝔓^⊥ is 0.5·X[2,:]·𝔓^⊥ = 0.5·(0.1, 0.3, 0, 0, 0)·diag → (0, 0.15, 0, 0, 0).
        assert!((hand[(0, 1)] - 0.15).abs() < 1e-15);
        let s1 = eval_s_k(&dil, &z, 1).unwrap();
        assert!((s1 - hand).amax() < 1e-15);
    }

    #[test]
    fn recursion_matches_enumeration() {
        let (dil, z) = setup(7, 5, &[3.0, 2.0], 0.15, 4);
        for k in 1..=6 {
            let fast = eval_s_k(&dil, &z, k).unwrap();
            let slow = eval_s_k_by_enumeration(&dil, &z, k).unwrap();
            let scale = slow.amax().max(1e-300);
            assert!((fast - &slow).amax() <= 1e-12 * scale.max(1.0), "k = {k}");
        }
    }

    #[test]
    fn terms_are_symmetric_and_bounded() {
        for seed in 0..50 {
            let (dil, z) = setup(8, 6, &[4.0, 2.0], 0.2, seed);
            let xnorm = spectral_norm(&z).unwrap();
            for k in 1..=5 {
                let s = eval_s_k(&dil, &z, k).unwrap();
                assert!((&s - s.transpose()).norm() < 1e-10);
                let op = spectral_norm(&s).unwrap();
                let bound = composition_count(k) as f64 * (xnorm / dil.lambda_r()).powi(k as i32);
                assert!(op <= bound * (1.0 + 1e-12), "seed {seed}, k {k}: {op} > {bound}");
            }
        }
    }

    #[test]
    fn first_order_term_is_orthogonal_to_signal_projector() {
        let (dil, z) = setup(9, 7, &[5.0, 3.0, 2.0], 0.2, 5);
        let theta = dil.theta();
        let s1 = eval_s_k(&dil, &z, 1).unwrap();
        assert!((&theta * theta.transpose()).dot(&s1).abs() < 1e-10);
    }

    #[test]
    fn truncated_series_converges_to_eigen_oracle() {
        let (dil, z) = setup(20, 20, &[8.0, 4.0, 2.0], 0.1, 6);
        let oracle = eigen_projector_delta(&dil, &z);
        let mut prev = f64::INFINITY;
        let mut errs = vec![];
        for k in 1..=8 {
            let t = truncated_projector_delta(&dil, &z, k).unwrap();
            let err = (&t.delta - &oracle).norm();
            assert!(err < prev);
            assert!(err <= 6.0 * t.tail_bound);
            errs.push(err);
            prev = err;
        }
        for w in errs.windows(2) {
            assert!(w[1] / w[0] <= 0.4 + 0.05, "{errs:?}");
        }
    }

    #[test]
    fn dist2_decomposition_matches_block_oracle_and_svd() {
        let dims = Dims::new(15, 12, 2).unwrap();
        let model = make_model(dims, &[6.0, 3.0], 7).unwrap();
        let mut z = sample_noise(dims, NoiseSpec::new(7, 0));
        z *= 0.05 * 3.0 / spectral_norm(&z).unwrap();
        let dil = SymmetricDilation::from_model(&model);

        // Explicit orthogonal complements from a full QR of [U | I].
        let complement = |q: &DMatrix<f64>| {
            let d = q.nrows();
            let mut aug = DMatrix::zeros(d, d + q.ncols());
            aug.columns_mut(0, q.ncols()).copy_from(q);
            aug.columns_mut(q.ncols(), d).copy_from(&DMatrix::identity(d, d));
            let qr = aug.qr();
            let full = qr.q();
            full.columns(q.ncols(), d - q.ncols()).into_owned()
        };
        let u_perp = complement(&model.u);
        let v_perp = complement(&model.v);
        let linv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            2,
            model.lambda.iter().map(|l| 1.0 / l),
        ));
        let a = &linv * model.v.transpose() * z.transpose() * &u_perp;
        let b = &linv * model.u.transpose() * &z * &v_perp;
        let block = 2.0 * (a.norm_squared() + b.norm_squared());
        let dec = dist2_series_decomposition(&dil, &z, 6).unwrap();
        assert!((dec.leading - block).abs() < 1e-10);

        let obs = crate::model::observe(&model, &z).unwrap();
        let svd = crate::model::top_r_svd(&obs, 2).unwrap();
        let dist2 = crate::inference::projection_distance2(&svd.u_hat, &svd.v_hat, &model.u, &model.v).unwrap();
        assert!((dec.total() - dist2).abs() <= dec.tail_bound);
    }

    /// Θ̂Θ̂ᵀ − ΘΘᵀ from a dense symmetric eigendecomposition of A + X.
    fn eigen_projector_delta(dil: &SymmetricDilation, z: &DMatrix<f64>) -> DMatrix<f64> {
        let a_hat = dil.dense() + crate::dilation::dilate_rect(z);
        let eig = a_hat.symmetric_eigen();
        let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
        let n = dil.dims.n();
        let mut p = DMatrix::zeros(n, n);
        for &i in &idx[..2 * dil.dims.r()] {
            let c = eig.eigenvectors.column(i);
            p += c * c.transpose();
        }
        let theta = dil.theta();
        p - &theta * theta.transpose()
    }
}
