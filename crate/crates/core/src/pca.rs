//! Principal-components factor extraction: the two-step estimator, the
//! policy purge of the slow/fast identification scheme, and the Gibbs
//! sampler's starting point.

use nalgebra::{DMatrix, DVector};

use crate::error::{FavarError, Result};
use crate::linalg::{checked_cholesky, ols, spectral_radius, symmetrized};
use crate::model::{FavarParams, ModelSpec};
use crate::panel::{Panel, Speed};

/// First `K` principal components of a panel.
///
/// Factors are normalised so that `FᵀF / T = I`; loadings absorb the scale
/// (`X ≈ F Λᵀ`). Each loading column has its largest-magnitude entry positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaFactors {
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EigenRoute {
    /// Eigenvectors of the `N × N` cross-product.
    Covariance,
    /// Eigenvectors of the `T × T` Gram matrix.
    Gram,
}

pub fn extract_principal_components(x: &DMatrix<f64>, k: usize) -> Result<PcaFactors> {
    let route = if x.ncols() <= x.nrows() { EigenRoute::Covariance } else { EigenRoute::Gram };
    extract_with_route(x, k, route)
}

fn top_eigen(m: DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = symmetrized(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().take(k).map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vecs = eig.eigenvectors.select_columns(&order[..k]);
    (vals, vecs)
}

pub(crate) fn extract_with_route(x: &DMatrix<f64>, k: usize, route: EigenRoute) -> Result<PcaFactors> {
    let (t, n) = x.shape();
    if k < 1 || k > t.min(n) {
        return Err(FavarError::InvalidSpec(format!(
            "number of components K = {k} must be in 1..={}",
            t.min(n)
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FavarError::Data("panel contains non-finite values".into()));
    }
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let total = xc.norm_squared();
    if !(total > 0.0) {
        return Err(FavarError::Data("panel has zero variance".into()));
    }
    let tf = t as f64;
    let (vals, mut factors) = match route {
        EigenRoute::Covariance => {
            let (vals, vecs) = top_eigen(xc.tr_mul(&xc), k);
            let mut f = &xc * vecs;
            for (j, v) in vals.iter().enumerate() {
                if !(*v > 0.0) {
                    return Err(FavarError::Numerical(format!("component {} has zero variance", j + 1)));
                }
                f.column_mut(j).scale_mut((tf / v).sqrt());
            }
            (vals, f)
        }
        EigenRoute::Gram => {
            let (vals, vecs) = top_eigen(&xc * xc.transpose(), k);
            if let Some(j) = vals.iter().position(|v| !(*v > 0.0)) {
                return Err(FavarError::Numerical(format!("component {} has zero variance", j + 1)));
            }
            (vals, vecs * tf.sqrt())
        }
    };
    let mut loadings = xc.tr_mul(&factors) / tf;
    for j in 0..k {
        let col = loadings.column(j);
        let imax = col.iamax();
        if col[imax] < 0.0 {
            loadings.column_mut(j).neg_mut();
            factors.column_mut(j).neg_mut();
        }
    }
    Ok(PcaFactors {
        factors,
        loadings,
        explained_variance_ratio: vals.iter().map(|v| v / total).collect(),
    })
}

/// Removes the part of the full-panel factors explained by the policy
/// variables once the slow-moving factors are controlled for:
/// `Ĉ − Y b_Y`, with `b_Y` from regressing `Ĉ` on `(Ĉ_slow, Y)`.
pub fn purge_policy_from_factors(
    all_factors: &PcaFactors,
    slow_factors: &PcaFactors,
    y: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let c = &all_factors.factors;
    let cs = &slow_factors.factors;
    let t = c.nrows();
    if cs.nrows() != t || y.nrows() != t {
        return Err(FavarError::Dimension(format!(
            "purge inputs have {}, {} and {} rows",
            t,
            cs.nrows(),
            y.nrows()
        )));
    }
    let active: Vec<usize> = (0..y.ncols()).filter(|&j| y.column(j).norm() > 0.0).collect();
    if active.is_empty() {
        return Ok(c.clone());
    }
    let ya = y.select_columns(&active);
    let ks = cs.ncols();
    let mut z = DMatrix::<f64>::zeros(t, ks + ya.ncols());
    z.columns_mut(0, ks).copy_from(cs);
    z.columns_mut(ks, ya.ncols()).copy_from(&ya);
    let b = ols(&z, c).map_err(|_| {
        FavarError::Numerical("slow factors and policy variables are collinear".into())
    })?;
    let b_y = b.rows(ks, ya.ncols());
    Ok(c - &ya * b_y)
}

/// Columns of `rows` from `x`, as a new matrix.
fn cols(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_columns(idx)
}

/// Policy-purged principal components rotated so the first `K` informational
/// series load on them with an identity block. This is the two-step factor
/// estimate.
pub fn two_step_factors(panel: &Panel, spec: &ModelSpec) -> Result<DMatrix<f64>> {
    let k = spec.factors;
    if k < 1 {
        return Err(FavarError::InvalidSpec("the number of factors K must be at least 1".into()));
    }
    let x = panel.x_matrix();
    let y = panel.y_matrix();
    let slow_idx: Vec<usize> = panel
        .x_meta()
        .iter()
        .enumerate()
        .filter(|(_, m)| m.speed == Speed::Slow)
        .map(|(i, _)| i)
        .collect();
    if slow_idx.len() < k {
        return Err(FavarError::InvalidSpec(format!(
            "{} slow series cannot identify K = {k} factors",
            slow_idx.len()
        )));
    }
    let all = extract_principal_components(&x, k)?;
    let slow = extract_principal_components(&cols(&x, &slow_idx), k)?;
    let purged = purge_policy_from_factors(&all, &slow, &y)?;
    // X_top ≈ purged · b  ⇒  F = purged · b has an identity loading block.
    let top = x.columns(0, k).into_owned();
    let b = ols(&purged, &top)
        .map_err(|_| FavarError::Numerical("purged factors are rank deficient".into()))?;
    Ok(purged * b)
}

/// Regresses every informational series on the factors (and, for fast
/// series, the policy variables), with the identification pins applied.
pub(crate) fn loadings_ols(
    x: &DMatrix<f64>,
    f: &DMatrix<f64>,
    y: &DMatrix<f64>,
    slow: &[bool],
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let (t, n) = x.shape();
    let k = f.ncols();
    let m = y.ncols();
    let mut lambda_f = DMatrix::<f64>::zeros(n, k);
    let mut lambda_y = DMatrix::<f64>::zeros(n, m);
    let mut idio = DVector::<f64>::zeros(n);
    let mut fy = DMatrix::<f64>::zeros(t, k + m);
    fy.columns_mut(0, k).copy_from(f);
    fy.columns_mut(k, m).copy_from(y);
    for i in 0..n {
        let xi = x.column(i).into_owned();
        let resid = if i < k {
            lambda_f[(i, i)] = 1.0;
            &xi - f.column(i)
        } else if slow[i] {
            let b = ols(f, &DMatrix::from_column_slice(t, 1, xi.as_slice()))?;
            lambda_f.row_mut(i).copy_from(&b.column(0).transpose());
            &xi - f * b.column(0)
        } else {
            let b = ols(&fy, &DMatrix::from_column_slice(t, 1, xi.as_slice()))?;
            for j in 0..k {
                lambda_f[(i, j)] = b[(j, 0)];
            }
            for j in 0..m {
                lambda_y[(i, j)] = b[(k + j, 0)];
            }
            &xi - &fy * b.column(0)
        };
        idio[i] = (resid.norm_squared() / t as f64).max(1e-6);
    }
    Ok((lambda_f, lambda_y, idio))
}

/// Stacks `z = (F, Y)` and builds the lagged regressor matrix of a VAR(d)
/// without intercept. Returns `(lhs, rhs)` with `T - d` rows.
pub(crate) fn var_design(z: &DMatrix<f64>, d: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (t, r) = z.shape();
    let rows = t - d;
    let lhs = z.rows(d, rows).into_owned();
    let mut rhs = DMatrix::<f64>::zeros(rows, r * d);
    for lag in 1..=d {
        rhs.columns_mut((lag - 1) * r, r).copy_from(&z.rows(d - lag, rows));
    }
    (lhs, rhs)
}

/// Splits a stacked `(r d) × r` coefficient matrix into `d` blocks `Γⱼ` with
/// `zₜ = Σⱼ Γⱼ zₜ₋ⱼ`.
pub(crate) fn split_coeffs(b: &DMatrix<f64>, r: usize, d: usize) -> Vec<DMatrix<f64>> {
    (0..d).map(|j| b.rows(j * r, r).transpose()).collect()
}

pub(crate) fn stack_fy(f: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let t = f.nrows();
    let (k, m) = (f.ncols(), y.ncols());
    let mut z = DMatrix::<f64>::zeros(t, k + m);
    z.columns_mut(0, k).copy_from(f);
    z.columns_mut(k, m).copy_from(y);
    z
}

/// Starting values for the sampler: two-step factors, OLS loadings with the
/// identification pins, and an OLS VAR shrunk towards zero if it is not
/// stable.
pub fn initialize_from_pca(panel: &Panel, spec: &ModelSpec) -> Result<(FavarParams, DMatrix<f64>)> {
    spec.validate_for(panel)?;
    let (k, d) = (spec.factors, spec.lags);
    let f = two_step_factors(panel, spec)?;
    let x = panel.x_matrix();
    let y = panel.y_matrix();
    let slow: Vec<bool> = panel.x_meta().iter().map(|m| m.speed == Speed::Slow).collect();
    let (lambda_f, lambda_y, idio_var) = loadings_ols(&x, &f, &y, &slow)?;

    let z = stack_fy(&f, &y);
    let r = k + spec.observables;
    let (lhs, rhs) = var_design(&z, d);
    let b = ols(&rhs, &lhs)
        .map_err(|_| FavarError::Numerical("initial VAR regressors are rank deficient".into()))?;
    let resid = &lhs - &rhs * &b;
    let mut sigma = symmetrized(resid.tr_mul(&resid) / lhs.nrows() as f64);
    if checked_cholesky(&sigma, "initial sigma").is_err() {
        sigma += DMatrix::<f64>::identity(r, r) * 1e-6;
    }
    let mut var_coeffs = split_coeffs(&b, r, d);
    if spec.priors.enforce_stationarity {
        let mut shrink = 0;
        while spectral_radius(&crate::impulse::companion_matrix(&var_coeffs)) >= 0.99 {
            for (j, g) in var_coeffs.iter_mut().enumerate() {
                *g *= 0.95f64.powi(j as i32 + 1);
            }
            shrink += 1;
            if shrink > 500 {
                return Err(FavarError::Numerical("could not stabilise the initial VAR".into()));
            }
        }
    }
    let params = FavarParams { lambda_f, lambda_y, idio_var, var_coeffs, sigma };
    params.check_dims(spec)?;
    Ok((params, f))
}
