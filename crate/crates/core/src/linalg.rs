//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Everything here works on `nalgebra` dynamic matrices. Covariances are
//! symmetrized on the way in and out; eigenvalues of positive semidefinite
//! inputs are floored at zero, and inverses fall back to a pseudo-inverse
//! once the condition number passes [`COND_LIMIT`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{FavarError, Result};

/// Condition number past which inverses switch to the pseudo-inverse.
pub const COND_LIMIT: f64 = 1e12;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    let mut m = m;
    symmetrize(&mut m);
    m
}

/// Returns `L` with `L Lᵀ = m` for a symmetric positive semidefinite `m`.
///
/// Cholesky is tried first; rank-deficient inputs go through the floored
/// eigen-decomposition instead, so the factor is square but may be singular.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    psd_factor_checked(m, f64::INFINITY).expect("unbounded tolerance never fails")
}

/// Eigenvalues below this multiple of `max(1, max diagonal)` are rounding
/// noise and are set to zero when factoring.
pub const PSD_ZERO: f64 = 1e-14;

/// Like [`psd_factor`], but fails when an eigenvalue is below
/// `-rel_tol * max(1, max diagonal)`.
pub fn psd_factor_checked(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let sym = symmetrized(m.clone());
    let scale = m.diagonal().amax().max(1.0);
    if let Some(ch) = sym.clone().cholesky() {
        let l = ch.l();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..l.nrows() {
            lo = lo.min(l[(i, i)].abs());
            hi = hi.max(l[(i, i)].abs());
        }
        if lo * lo > hi * hi / COND_LIMIT && lo * lo > PSD_ZERO * scale {
            return Ok(l);
        }
    }
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -rel_tol * scale {
        return Err(FavarError::Numerical(format!(
            "covariance is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    let mut f = eig.eigenvectors;
    for (j, v) in eig.eigenvalues.iter().enumerate() {
        let v = if *v > PSD_ZERO * scale { v.sqrt() } else { 0.0 };
        f.column_mut(j).scale_mut(v);
    }
    Ok(f)
}

/// Inverse of a symmetric matrix, or its pseudo-inverse when the matrix is
/// singular or the condition number exceeds [`COND_LIMIT`].
pub fn sym_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrized(m.clone());
    if let Some(ch) = sym.clone().cholesky() {
        let l = ch.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..l.nrows() {
            lo = lo.min(l[(i, i)].abs());
            hi = hi.max(l[(i, i)].abs());
        }
        if lo * lo > hi * hi / COND_LIMIT {
            return symmetrized(ch.inverse());
        }
    }
    sym_pinv(&sym)
}

/// Eigen-based pseudo-inverse of a symmetric matrix.
pub fn sym_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrized(m.clone()).symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = max / COND_LIMIT;
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (j, &v) in eig.eigenvalues.iter().enumerate() {
        if v > cut && v > 0.0 {
            let u = eig.eigenvectors.column(j);
            out += (&u * u.transpose()) / v;
        }
    }
    out
}

/// Solves the normal equations of `y ≈ z b` for every column of `y`.
pub fn ols(z: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ztz = z.tr_mul(z);
    let zty = z.tr_mul(y);
    let ch = checked_cholesky(&ztz, "regressor cross-product")?;
    Ok(ch.solve(&zty))
}

/// Cholesky that also rejects numerically rank-deficient inputs.
pub fn checked_cholesky(
    m: &DMatrix<f64>,
    what: &str,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let sym = symmetrized(m.clone());
    let ch = sym
        .cholesky()
        .ok_or_else(|| FavarError::Numerical(format!("{what} is not positive definite")))?;
    let l = ch.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..l.nrows() {
        lo = lo.min(l[(i, i)].abs());
        hi = hi.max(l[(i, i)].abs());
    }
    if !(lo * lo > hi * hi / COND_LIMIT) {
        return Err(FavarError::Numerical(format!(
            "{what} is rank deficient (condition number > {COND_LIMIT:e})"
        )));
    }
    Ok(ch)
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, z| acc.max(z.norm()))
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
    // Column-major fill order is part of the seed contract.
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Draws from `InvGamma(shape, scale)`, i.e. `1 / Gamma(shape, rate = scale)`.
pub fn inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / scale).map_err(|e| {
        FavarError::Numerical(format!("inverse-gamma({shape}, {scale}): {e}"))
    })?;
    Ok(1.0 / g.sample(rng))
}

/// Draws `Σ ~ IW(dof, scale)` (mean `scale / (dof - p - 1)`) by the Bartlett
/// decomposition of the matching Wishart on `scale⁻¹`.
pub fn inverse_wishart<R: Rng + ?Sized>(
    dof: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if dof <= (p as f64) - 1.0 {
        return Err(FavarError::Numerical(format!(
            "inverse-Wishart needs dof > p - 1 (dof = {dof}, p = {p})"
        )));
    }
    let prec = sym_inverse(scale);
    let l = checked_cholesky(&prec, "inverse-Wishart scale")?.l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| FavarError::Numerical(format!("chi-square: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let inv = la
        .clone()
        .try_inverse()
        .ok_or_else(|| FavarError::Numerical("singular Wishart factor".into()))?;
    Ok(symmetrized(inv.tr_mul(&inv)))
}

/// Sample mean and (T-1)-denominator standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
