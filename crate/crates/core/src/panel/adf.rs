//! Augmented Dickey–Fuller unit-root test, intercept-only specification.
//!
//! Regression: `Δy_t = α + γ y_{t-1} + Σ_{j=1..p} δ_j Δy_{t-j} + ε_t`; the
//! statistic is the t-ratio of `γ`. Critical values are the large-sample
//! MacKinnon constants for the constant-only case.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FavarError, Result};
use crate::linalg::checked_cholesky;

pub const CRITICAL_1PCT: f64 = -3.43;
pub const CRITICAL_5PCT: f64 = -2.86;
pub const CRITICAL_10PCT: f64 = -2.57;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags_used: usize,
    pub critical_1: f64,
    pub critical_5: f64,
    pub critical_10: f64,
    pub reject_unit_root_5pct: bool,
}

/// Schwert's rule `floor(4 (T/100)^{1/4})`.
pub fn schwert_lag(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

pub fn adf_test(values: &[f64], max_lag: Option<usize>) -> Result<AdfResult> {
    let n = values.len();
    if n < 20 {
        return Err(FavarError::Data(format!("ADF test needs at least 20 observations, got {n}")));
    }
    let first = values[0];
    if values.iter().all(|v| *v == first) {
        return Err(FavarError::Data("ADF test on a constant series".into()));
    }
    let p = max_lag.unwrap_or_else(|| schwert_lag(n));
    let dy: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    // Usable rows: dy index t in p..dy.len(), lagged level values[t].
    let rows = dy.len().checked_sub(p).filter(|r| *r > p + 2).ok_or_else(|| {
        FavarError::Data(format!("series too short for {p} ADF lags"))
    })?;
    let k = 2 + p;
    let mut z = DMatrix::<f64>::zeros(rows, k);
    let mut y = DMatrix::<f64>::zeros(rows, 1);
    for r in 0..rows {
        let t = r + p;
        y[(r, 0)] = dy[t];
        z[(r, 0)] = 1.0;
        z[(r, 1)] = values[t];
        for j in 1..=p {
            z[(r, 1 + j)] = dy[t - j];
        }
    }
    let ztz = z.tr_mul(&z);
    let ch = checked_cholesky(&ztz, "ADF regressors")
        .map_err(|_| FavarError::Data("ADF regressors are collinear (zero-variance level)".into()))?;
    let beta = ch.solve(&z.tr_mul(&y));
    let resid = &y - &z * &beta;
    let dof = (rows - k) as f64;
    let s2 = resid.norm_squared() / dof;
    let inv = ch.inverse();
    let se = (s2 * inv[(1, 1)]).sqrt();
    let statistic = beta[(1, 0)] / se;
    Ok(AdfResult {
        statistic,
        lags_used: p,
        critical_1: CRITICAL_1PCT,
        critical_5: CRITICAL_5PCT,
        critical_10: CRITICAL_10PCT,
        reject_unit_root_5pct: statistic < CRITICAL_5PCT,
    })
}
