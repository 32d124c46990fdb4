//! Stationarity-inducing transformation codes and their inverses.
//!
//! | code | transform        |
//! |------|------------------|
//! | 1    | `x`              |
//! | 2    | `Δx`             |
//! | 3    | `Δ²x`            |
//! | 4    | `log x`          |
//! | 5    | `Δ log x`        |
//! | 6    | `Δ² log x`       |

use crate::error::{FavarError, Result};

/// A validated transformation code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Tcode(u8);

impl Tcode {
    pub fn new(code: u8) -> Result<Self> {
        if (1..=6).contains(&code) {
            Ok(Tcode(code))
        } else {
            Err(FavarError::Data(format!(
                "transformation code must be in 1..=6, got {code}"
            )))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn uses_log(self) -> bool {
        self.0 >= 4
    }

    /// Number of differences applied (0, 1 or 2).
    pub fn diff_order(self) -> usize {
        match self.0 {
            1 | 4 => 0,
            2 | 5 => 1,
            _ => 2,
        }
    }
}

impl TryFrom<u8> for Tcode {
    type Error = FavarError;
    fn try_from(v: u8) -> Result<Self> {
        Tcode::new(v)
    }
}

impl From<Tcode> for u8 {
    fn from(t: Tcode) -> u8 {
        t.0
    }
}

fn difference(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn apply_tcode(values: &[f64], tcode: Tcode) -> Result<Vec<f64>> {
    let order = tcode.diff_order();
    if values.len() <= order {
        return Err(FavarError::Data(format!(
            "series of length {} is too short for tcode {}",
            values.len(),
            tcode.code()
        )));
    }
    let mut out: Vec<f64> = if tcode.uses_log() {
        values
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(FavarError::Data(format!(
                        "tcode {} takes logs but the series contains {v}",
                        tcode.code()
                    )))
                }
            })
            .collect::<Result<_>>()?
    } else {
        values.to_vec()
    };
    for _ in 0..order {
        out = difference(&out);
    }
    Ok(out)
}

/// Integrates `order` times; `anchors` are the first `order` values of the
/// undifferenced series, in time order.
pub(crate) fn undifference(values: &[f64], order: usize, anchors: &[f64]) -> Vec<f64> {
    match order {
        0 => values.to_vec(),
        1 => {
            let mut out = Vec::with_capacity(values.len() + 1);
            let mut level = anchors[0];
            out.push(level);
            for v in values {
                level += v;
                out.push(level);
            }
            out
        }
        _ => {
            // Recover the first differences, then integrate once more.
            let first_diff_anchor = anchors[1] - anchors[0];
            let diffs = undifference(values, 1, &[first_diff_anchor]);
            undifference(&diffs, 1, &anchors[..1])
        }
    }
}

/// Inverts [`apply_tcode`]. `initial_values` are the first 0, 1 or 2 values
/// of the original series, which the differencing discarded.
pub fn invert_tcode(transformed: &[f64], tcode: Tcode, initial_values: &[f64]) -> Result<Vec<f64>> {
    let order = tcode.diff_order();
    if initial_values.len() != order {
        return Err(FavarError::Data(format!(
            "tcode {} needs {order} initial values, got {}",
            tcode.code(),
            initial_values.len()
        )));
    }
    if tcode.uses_log() {
        let logs = initial_values
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(FavarError::Data(format!("log anchor must be positive, got {v}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(undifference(transformed, order, &logs)
            .into_iter()
            .map(f64::exp)
            .collect())
    } else {
        Ok(undifference(transformed, order, initial_values))
    }
}

/// Cumulates a response path expressed in transformed units back to level
/// (or log-level) units, with zero anchors. Linear in `responses`.
pub fn cumulate_response(responses: &[f64], tcode: Tcode) -> Vec<f64> {
    let mut out = responses.to_vec();
    for _ in 0..tcode.diff_order() {
        let mut acc = 0.0;
        for v in out.iter_mut() {
            acc += *v;
            *v = acc;
        }
    }
    out
}
