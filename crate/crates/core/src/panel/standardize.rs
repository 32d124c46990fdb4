use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FavarError, Result};
use crate::linalg::mean_std;

/// Column location and scale removed by [`standardize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdRecord {
    pub mean: f64,
    pub stddev: f64,
}

impl StdRecord {
    pub fn restore(&self, z: f64) -> f64 {
        z * self.stddev + self.mean
    }
}

/// Centers every column and scales it to unit sample stddev (`T - 1`).
pub fn standardize(data: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<StdRecord>)> {
    let mut out = data.clone();
    let mut records = Vec::with_capacity(data.ncols());
    for j in 0..data.ncols() {
        let col: Vec<f64> = data.column(j).iter().copied().collect();
        let (mean, stddev) = mean_std(&col);
        if !(stddev > 1e-12) {
            return Err(FavarError::Data(format!(
                "column {j} is (near-)constant (stddev {stddev:e})"
            )));
        }
        out.column_mut(j).apply(|v| *v = (*v - mean) / stddev);
        records.push(StdRecord { mean, stddev });
    }
    Ok((out, records))
}
