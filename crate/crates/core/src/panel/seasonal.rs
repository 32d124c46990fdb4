use super::Quarter;
use crate::error::{FavarError, Result};

/// Removes quarter-of-year means, keeping the average of the four quarter
/// means as the intercept.
pub fn deseasonalize(values: &[f64], dates: &[Quarter]) -> Result<Vec<f64>> {
    if values.len() != dates.len() {
        return Err(FavarError::Dimension(format!(
            "{} values but {} dates",
            values.len(),
            dates.len()
        )));
    }
    if values.len() < 8 {
        return Err(FavarError::Data(format!(
            "seasonal adjustment needs at least 8 observations, got {}",
            values.len()
        )));
    }
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for (v, d) in values.iter().zip(dates) {
        let q = (d.quarter() - 1) as usize;
        sums[q] += v;
        counts[q] += 1;
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let intercept = means.iter().sum::<f64>() / 4.0;
    Ok(values
        .iter()
        .zip(dates)
        .map(|(v, d)| v - means[(d.quarter() - 1) as usize] + intercept)
        .collect())
}
