//! Temporal disaggregation of annual series to quarters and aggregation of
//! monthly series to quarters.
//!
//! Disaggregation picks the quarterly path with the smallest sum of squared
//! second differences among all paths whose yearly blocks sum (or average)
//! to the annual observations. The solution is piecewise smooth and exact in
//! the aggregation constraints; it is found from the KKT system
//!
//! ```text
//! [ DᵀD  Cᵀ ] [x]   [0]
//! [ C    0  ] [μ] = [c]
//! ```
//!
//! with `D` the second-difference operator and `C` the block-sum operator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FavarError, Result};

/// Quarters per year.
pub const RATIO: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    Sum,
    Mean,
}

pub fn quadratic_interpolate(low_freq: &[f64], mode: AggregationMode) -> Result<Vec<f64>> {
    let n = low_freq.len();
    if n < 3 {
        return Err(FavarError::Data(format!(
            "quadratic interpolation needs at least 3 low-frequency values, got {n}"
        )));
    }
    if low_freq.iter().any(|v| !v.is_finite()) {
        return Err(FavarError::Data("non-finite value in low-frequency series".into()));
    }
    let m = n * RATIO;
    let sums: Vec<f64> = match mode {
        AggregationMode::Sum => low_freq.to_vec(),
        AggregationMode::Mean => low_freq.iter().map(|v| v * RATIO as f64).collect(),
    };

    // DᵀD for the second-difference operator, assembled row by row.
    let mut kkt = DMatrix::<f64>::zeros(m + n, m + n);
    for r in 0..m - 2 {
        let coefs = [(r, 1.0), (r + 1, -2.0), (r + 2, 1.0)];
        for &(i, a) in &coefs {
            for &(j, b) in &coefs {
                kkt[(i, j)] += a * b;
            }
        }
    }
    for (k, _) in sums.iter().enumerate() {
        for q in 0..RATIO {
            kkt[(m + k, k * RATIO + q)] = 1.0;
            kkt[(k * RATIO + q, m + k)] = 1.0;
        }
    }
    let mut rhs = DVector::<f64>::zeros(m + n);
    for (k, s) in sums.iter().enumerate() {
        rhs[m + k] = *s;
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| FavarError::Numerical("singular disaggregation system".into()))?;
    Ok(sol.rows(0, m).iter().copied().collect())
}

/// Collapses complete blocks of three monthly values into quarterly values.
/// Incomplete blocks (any `None`) yield `None`.
pub fn aggregate_monthly(monthly: &[Option<f64>], mode: AggregationMode) -> Vec<Option<f64>> {
    monthly
        .chunks(3)
        .map(|block| {
            if block.len() < 3 {
                return None;
            }
            let vals: Option<Vec<f64>> = block.iter().copied().collect();
            vals.map(|v| {
                let s: f64 = v.iter().sum();
                match mode {
                    AggregationMode::Sum => s,
                    AggregationMode::Mean => s / 3.0,
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sum_allocation() {
        let q = quadratic_interpolate(&[4.0, 4.0, 4.0], AggregationMode::Sum).unwrap();
        assert_eq!(q.len(), 12);
        for v in q {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_mean_allocation() {
        let q = quadratic_interpolate(&[2.0, 2.0, 2.0], AggregationMode::Mean).unwrap();
        for v in q {
            assert!((v - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn too_short() {
        assert!(quadratic_interpolate(&[1.0, 2.0], AggregationMode::Sum).is_err());
    }

    #[test]
    fn monthly_blocks() {
        let m = [Some(1.0), Some(2.0), Some(3.0), Some(4.0), None, Some(6.0), Some(7.0)];
        let q = aggregate_monthly(&m, AggregationMode::Mean);
        assert_eq!(q, vec![Some(2.0), None, None]);
        let q = aggregate_monthly(&m[..3], AggregationMode::Sum);
        assert_eq!(q, vec![Some(6.0)]);
    }
}
