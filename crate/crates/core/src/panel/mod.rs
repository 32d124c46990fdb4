//! Panel ingestion: loading, transformation, screening and standardization
//! of the raw macro panel into a model-ready [`Panel`].

mod adf;
mod interp;
mod io;
mod seasonal;
mod standardize;
mod transform;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use adf::{adf_test, schwert_lag, AdfResult, CRITICAL_10PCT, CRITICAL_1PCT, CRITICAL_5PCT};
pub use interp::{aggregate_monthly, quadratic_interpolate, AggregationMode};
pub use io::{
    load_monthly, load_panel, read_prepared, write_metadata_csv, write_prepared, write_raw_csv, PANEL_CSV,
    PANEL_SIDECAR,
    PreparedSidecar,
};
pub use seasonal::deseasonalize;
pub use standardize::{standardize, StdRecord};
pub use transform::{apply_tcode, cumulate_response, invert_tcode, Tcode};

use crate::error::{FavarError, Result};

/// Minimum balanced sample length.
pub const MIN_PERIODS: usize = 20;

/// A calendar quarter, `YYYYQn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    year: i32,
    quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(FavarError::Parse(format!("quarter must be 1..=4, got {quarter}")));
        }
        Ok(Quarter { year, quarter })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.quarter
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    fn from_ordinal(o: i64) -> Self {
        Quarter {
            year: o.div_euclid(4) as i32,
            quarter: (o.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn offset(self, by: i64) -> Self {
        Quarter::from_ordinal(self.ordinal() + by)
    }

    /// Signed number of quarters from `self` to `other`.
    pub fn distance_to(self, other: Quarter) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = FavarError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || FavarError::Parse(format!("unparseable quarter label '{s}' (expected YYYYQn)"));
        let (y, q) = s.split_once(['Q', 'q']).ok_or_else(bad)?;
        if y.len() != 4 || q.len() != 1 {
            return Err(bad());
        }
        let year: i32 = y.parse().map_err(|_| bad())?;
        let quarter: u8 = q.parse().map_err(|_| bad())?;
        Quarter::new(year, quarter).map_err(|_| bad())
    }
}

impl Serialize for Quarter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quarter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speed {
    Slow,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    None,
    Sum,
    Mean,
}

impl Interpolation {
    fn mode(self) -> Option<AggregationMode> {
        match self {
            Interpolation::None => None,
            Interpolation::Sum => Some(AggregationMode::Sum),
            Interpolation::Mean => Some(AggregationMode::Mean),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NativeFrequency {
    Quarterly,
    Annual,
    Monthly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMeta {
    pub name: String,
    pub tcode: Tcode,
    pub speed: Speed,
    pub interpolation: Interpolation,
    pub seasonal: bool,
    pub native_frequency: NativeFrequency,
}

impl VariableMeta {
    pub fn validate(&self) -> Result<()> {
        let quarterly = self.native_frequency == NativeFrequency::Quarterly;
        let none = self.interpolation == Interpolation::None;
        if quarterly != none {
            return Err(FavarError::Data(format!(
                "variable '{}': interpolation must be 'none' exactly when native_frequency is quarterly",
                self.name
            )));
        }
        Ok(())
    }
}

/// One raw quarterly series on a shared date index; `None` marks a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub dates: Vec<Quarter>,
    pub values: Vec<Option<f64>>,
}

/// The balanced, transformed and standardized panel.
///
/// Every column except the policy column has mean 0 and unit sample
/// standard deviation. The policy column is centered but left in its native
/// scale (its record carries a unit standard deviation).
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub data: DMatrix<f64>,
    pub meta: Vec<VariableMeta>,
    pub dates: Vec<Quarter>,
    pub standardization: Vec<StdRecord>,
    pub policy_name: String,
}

impl Panel {
    pub fn periods(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.data.ncols()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.meta.iter().position(|m| m.name == name)
    }

    pub fn policy_index(&self) -> usize {
        self.index_of(&self.policy_name)
            .expect("validated panel always contains its policy column")
    }

    /// Column indices of the informational series `X`, in panel order.
    pub fn x_columns(&self) -> Vec<usize> {
        let p = self.policy_index();
        (0..self.n_series()).filter(|&i| i != p).collect()
    }

    pub fn x_matrix(&self) -> DMatrix<f64> {
        let cols = self.x_columns();
        self.data.select_columns(&cols)
    }

    pub fn y_matrix(&self) -> DMatrix<f64> {
        self.data.columns(self.policy_index(), 1).into_owned()
    }

    pub fn x_meta(&self) -> Vec<&VariableMeta> {
        self.x_columns().into_iter().map(|i| &self.meta[i]).collect()
    }

    /// Checks the panel invariants; called after every construction.
    pub fn validate(&self) -> Result<()> {
        let (t, n) = self.data.shape();
        if self.meta.len() != n || self.standardization.len() != n || self.dates.len() != t {
            return Err(FavarError::Dimension(format!(
                "panel is {t}x{n} but has {} metadata rows, {} records and {} dates",
                self.meta.len(),
                self.standardization.len(),
                self.dates.len()
            )));
        }
        if t < MIN_PERIODS {
            return Err(FavarError::Data(format!(
                "balanced panel has {t} periods, need at least {MIN_PERIODS}"
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(FavarError::Data("panel contains non-finite values".into()));
        }
        let policy = self.index_of(&self.policy_name).ok_or_else(|| {
            FavarError::Data(format!("policy variable '{}' not in panel", self.policy_name))
        })?;
        for w in self.dates.windows(2) {
            if w[0].distance_to(w[1]) != 1 {
                return Err(FavarError::Data(format!(
                    "panel dates not consecutive at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        for j in 0..n {
            let col: Vec<f64> = self.data.column(j).iter().copied().collect();
            let (mean, sd) = crate::linalg::mean_std(&col);
            let name = &self.meta[j].name;
            if !(self.standardization[j].stddev > 0.0) {
                return Err(FavarError::Data(format!("non-positive stored stddev for '{name}'")));
            }
            if mean.abs() > 1e-10 {
                return Err(FavarError::Data(format!("column '{name}' has mean {mean:e}")));
            }
            if j != policy && (sd - 1.0).abs() > 1e-10 {
                return Err(FavarError::Data(format!("column '{name}' has stddev {sd}")));
            }
        }
        Ok(())
    }
}

/// Options for [`prepare`].
#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub policy_name: String,
    /// `None` selects the Schwert rule.
    pub adf_max_lag: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreeningEntry {
    pub name: String,
    pub tcode: u8,
    pub speed: Speed,
    pub seasonally_adjusted: bool,
    pub interpolated: bool,
    pub adf: Option<AdfResult>,
    pub adf_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepareReport {
    pub first_date: Quarter,
    pub last_date: Quarter,
    pub periods: usize,
    pub series: usize,
    pub entries: Vec<ScreeningEntry>,
}

/// Expands an annual series (one observation per calendar year, placed in any
/// quarter of that year) to quarterly values.
fn disaggregate_annual(series: &RawSeries, mode: AggregationMode) -> Result<Vec<Option<f64>>> {
    let mut years: Vec<(i32, f64)> = Vec::new();
    for (d, v) in series.dates.iter().zip(&series.values) {
        if let Some(v) = v {
            if years.last().is_some_and(|(y, _)| *y == d.year()) {
                return Err(FavarError::Data(format!(
                    "annual series '{}' has two values in {}",
                    series.name,
                    d.year()
                )));
            }
            years.push((d.year(), *v));
        }
    }
    for w in years.windows(2) {
        if w[1].0 != w[0].0 + 1 {
            return Err(FavarError::Data(format!(
                "annual series '{}' has a gap between {} and {}",
                series.name, w[0].0, w[1].0
            )));
        }
    }
    let lows: Vec<f64> = years.iter().map(|(_, v)| *v).collect();
    let quarterly = quadratic_interpolate(&lows, mode)
        .map_err(|e| FavarError::Data(format!("series '{}': {e}", series.name)))?;
    let first_year = years[0].0;
    Ok(series
        .dates
        .iter()
        .map(|d| {
            let k = (d.year() - first_year) as i64 * 4 + (d.quarter() as i64 - 1);
            if k >= 0 && (k as usize) < quarterly.len() {
                Some(quarterly[k as usize])
            } else {
                None
            }
        })
        .collect())
}

/// Runs the full preprocessing chain and returns a validated panel together
/// with its screening report.
///
/// Per series: quarterly expansion (annual), seasonal adjustment (in logs for
/// log codes), transformation by tcode, then joint balancing by trimming
/// leading/trailing rows, ADF screening and standardization.
pub fn prepare(
    raw: &[RawSeries],
    meta: &[VariableMeta],
    options: &PrepareOptions,
) -> Result<(Panel, PrepareReport)> {
    if raw.len() != meta.len() {
        return Err(FavarError::Dimension(format!(
            "{} series but {} metadata rows",
            raw.len(),
            meta.len()
        )));
    }
    if raw.is_empty() {
        return Err(FavarError::Data("empty panel".into()));
    }
    let dates = raw[0].dates.clone();
    let t_all = dates.len();

    let mut transformed: Vec<Vec<Option<f64>>> = Vec::with_capacity(raw.len());
    let mut entries = Vec::with_capacity(raw.len());
    for (s, m) in raw.iter().zip(meta) {
        if s.name != m.name {
            return Err(FavarError::Data(format!(
                "series '{}' paired with metadata '{}'",
                s.name, m.name
            )));
        }
        if s.dates != dates {
            return Err(FavarError::Data(format!("series '{}' has a different date index", s.name)));
        }
        m.validate()?;
        let values = match (m.native_frequency, m.interpolation.mode()) {
            (NativeFrequency::Annual, Some(mode)) => disaggregate_annual(s, mode)?,
            _ => s.values.clone(),
        };
        let first = values.iter().position(Option::is_some);
        let last = values.iter().rposition(Option::is_some);
        let (first, last) = match (first, last) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(FavarError::Data(format!("series '{}' is empty", s.name))),
        };
        let span: Vec<f64> = values[first..=last]
            .iter()
            .map(|v| {
                v.ok_or_else(|| {
                    FavarError::Data(format!("series '{}' has an interior gap", s.name))
                })
            })
            .collect::<Result<_>>()?;
        let span = if m.seasonal {
            let ds = &dates[first..=last];
            if m.tcode.uses_log() {
                if let Some(bad) = span.iter().find(|v| **v <= 0.0) {
                    return Err(FavarError::Data(format!(
                        "series '{}' has non-positive value {bad} under log tcode",
                        s.name
                    )));
                }
                let logs: Vec<f64> = span.iter().map(|v| v.ln()).collect();
                deseasonalize(&logs, ds)?.into_iter().map(f64::exp).collect()
            } else {
                deseasonalize(&span, ds)?
            }
        } else {
            span
        };
        let tv = apply_tcode(&span, m.tcode)
            .map_err(|e| FavarError::Data(format!("series '{}': {e}", s.name)))?;
        let offset = first + m.tcode.diff_order();
        let mut col = vec![None; t_all];
        for (k, v) in tv.into_iter().enumerate() {
            col[offset + k] = Some(v);
        }
        transformed.push(col);
        entries.push(ScreeningEntry {
            name: m.name.clone(),
            tcode: m.tcode.code(),
            speed: m.speed,
            seasonally_adjusted: m.seasonal,
            interpolated: m.interpolation != Interpolation::None,
            adf: None,
            adf_error: None,
        });
    }

    // Balance: keep the rows where every column is present.
    let start = transformed
        .iter()
        .map(|c| c.iter().position(Option::is_some).unwrap_or(t_all))
        .max()
        .unwrap_or(0);
    let end = transformed
        .iter()
        .map(|c| c.iter().rposition(Option::is_some).map_or(0, |p| p + 1))
        .min()
        .unwrap_or(0);
    if end <= start || end - start < MIN_PERIODS {
        return Err(FavarError::Data(format!(
            "balanced sample has {} periods, need at least {MIN_PERIODS}",
            end.saturating_sub(start)
        )));
    }
    let t = end - start;
    let n = raw.len();
    let mut data = DMatrix::<f64>::zeros(t, n);
    for (j, col) in transformed.iter().enumerate() {
        for i in 0..t {
            data[(i, j)] = col[start + i].expect("balanced window has no gaps");
        }
    }

    for (j, e) in entries.iter_mut().enumerate() {
        let col: Vec<f64> = data.column(j).iter().copied().collect();
        match adf_test(&col, options.adf_max_lag) {
            Ok(r) => e.adf = Some(r),
            Err(err) => e.adf_error = Some(err.to_string()),
        }
    }

    let policy = meta
        .iter()
        .position(|m| m.name == options.policy_name)
        .ok_or_else(|| {
            FavarError::InvalidSpec(format!(
                "policy variable '{}' not found in metadata",
                options.policy_name
            ))
        })?;
    for (j, m) in meta.iter().enumerate() {
        let col: Vec<f64> = data.column(j).iter().copied().collect();
        if !(crate::linalg::mean_std(&col).1 > 1e-12) {
            return Err(FavarError::Data(format!(
                "variable '{}' is constant over the balanced sample",
                m.name
            )));
        }
    }
    let (std_data, mut records) = standardize(&data)?;
    let mut std_data = std_data;
    // Policy column: centered only, native scale retained.
    let mean = records[policy].mean;
    for i in 0..t {
        std_data[(i, policy)] = data[(i, policy)] - mean;
    }
    records[policy] = StdRecord { mean, stddev: 1.0 };
    let data = std_data;

    let panel = Panel {
        data,
        meta: meta.to_vec(),
        dates: dates[start..end].to_vec(),
        standardization: records,
        policy_name: options.policy_name.clone(),
    };
    panel.validate()?;
    let report = PrepareReport {
        first_date: panel.dates[0],
        last_date: panel.dates[t - 1],
        periods: t,
        series: n,
        entries,
    };
    Ok((panel, report))
}
