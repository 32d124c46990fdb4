//! Structural impulse responses to a policy shock and their posterior
//! credible bands.
//!
//! Identification is recursive: `Σ = P Pᵀ` (Cholesky) with the policy
//! variable ordered last, so factors respond to the policy innovation only
//! with a lag. The shock is scaled so that the policy variable moves by
//! `shock_size` (in its own units) on impact.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FavarError, Result};
use crate::gibbs::PosteriorChain;
use crate::model::FavarParams;
use crate::panel::{cumulate_response, Panel, StdRecord, Tcode};

/// Companion matrix of `zₜ = Σⱼ Γⱼ zₜ₋ⱼ`.
pub fn companion_matrix(var_coeffs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let d = var_coeffs.len();
    if d == 0 {
        return DMatrix::zeros(0, 0);
    }
    let r = var_coeffs[0].nrows();
    let s = r * d;
    let mut a = DMatrix::<f64>::zeros(s, s);
    for (j, g) in var_coeffs.iter().enumerate() {
        a.view_mut((0, j * r), (r, r)).copy_from(g);
    }
    for i in r..s {
        a[(i, i - r)] = 1.0;
    }
    a
}

/// Companion matrix plus the `S × (K+M)` selector mapping the VAR innovation
/// into the state.
pub fn build_companion(
    var_coeffs: &[DMatrix<f64>],
    sigma: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = sigma.nrows();
    if var_coeffs.is_empty()
        || sigma.ncols() != r
        || var_coeffs.iter().any(|g| g.shape() != (r, r))
    {
        return Err(FavarError::Dimension(format!(
            "VAR coefficients must be {r}x{r} matrices matching sigma"
        )));
    }
    let a = companion_matrix(var_coeffs);
    let mut sel = DMatrix::<f64>::zeros(a.nrows(), r);
    sel.view_mut((0, 0), (r, r)).fill_with_identity();
    Ok((a, sel))
}

/// Responses of `z = (F, Y)` at horizons `0..=horizon` to the policy shock.
/// Rows are horizons, columns are VAR variables.
pub fn structural_irf(
    companion: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    policy_index: usize,
    horizon: usize,
    shock_size: f64,
) -> Result<DMatrix<f64>> {
    let r = sigma.nrows();
    if r == 0 || policy_index + 1 != r {
        return Err(FavarError::InvalidSpec(format!(
            "the policy variable must be ordered last (index {}), got {policy_index}",
            r.saturating_sub(1)
        )));
    }
    let s = companion.nrows();
    if companion.ncols() != s || s % r != 0 {
        return Err(FavarError::Dimension("companion matrix does not match sigma".into()));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| FavarError::Numerical("Cholesky factorisation of sigma failed".into()))?;
    let p = chol.l();
    let scale = shock_size / p[(policy_index, policy_index)];
    let mut state = nalgebra::DVector::<f64>::zeros(s);
    for i in 0..r {
        state[i] = p[(i, policy_index)] * scale;
    }
    state[policy_index] = shock_size;
    let mut out = DMatrix::<f64>::zeros(horizon + 1, r);
    for h in 0..=horizon {
        if h > 0 {
            state = companion * &state;
        }
        for i in 0..r {
            out[(h, i)] = state[i];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Units of the standardized, transformed panel.
    Standardized,
    /// Transformed series in their original scale.
    Native,
    /// Native responses cumulated back to (log-)levels for differenced codes.
    Level,
}

impl Units {
    pub fn as_str(self) -> &'static str {
        match self {
            Units::Standardized => "standardized",
            Units::Native => "native",
            Units::Level => "level",
        }
    }
}

impl std::str::FromStr for Units {
    type Err = FavarError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standardized" => Ok(Units::Standardized),
            "native" => Ok(Units::Native),
            "level" => Ok(Units::Level),
            other => Err(FavarError::InvalidSpec(format!("unknown units '{other}'"))),
        }
    }
}

fn convert_units(col: &mut [f64], record: &StdRecord, tcode: Tcode, units: Units) {
    if units == Units::Standardized {
        return;
    }
    for v in col.iter_mut() {
        *v *= record.stddev;
    }
    if units == Units::Level {
        let cum = cumulate_response(col, tcode);
        col.copy_from_slice(&cum);
    }
}

/// Responses of the informational series: `λ_f,i · F-response + λ_y,i ·
/// Y-response`, converted to `units` with the series' standardization record
/// and tcode.
pub fn observable_irf(
    state_irf: &DMatrix<f64>,
    params: &FavarParams,
    records: &[StdRecord],
    tcodes: &[Tcode],
    units: Units,
) -> Result<DMatrix<f64>> {
    let n = params.n_series();
    let (k, m) = (params.factors(), params.observables());
    if state_irf.ncols() != k + m {
        return Err(FavarError::Dimension("state IRF width does not match K + M".into()));
    }
    if records.len() != n || tcodes.len() != n {
        return Err(FavarError::Data(format!(
            "missing standardization records: need {n}, have {} records and {} tcodes",
            records.len(),
            tcodes.len()
        )));
    }
    let f_resp = state_irf.columns(0, k);
    let y_resp = state_irf.columns(k, m);
    let mut out = f_resp * params.lambda_f.transpose() + y_resp * params.lambda_y.transpose();
    for i in 0..n {
        let mut col: Vec<f64> = out.column(i).iter().copied().collect();
        convert_units(&mut col, &records[i], tcodes[i], units);
        out.column_mut(i).copy_from_slice(&col);
    }
    Ok(out)
}

/// Maps panel columns to the model: informational rows or the policy variable.
#[derive(Debug, Clone)]
pub struct ResponseMap {
    pub names: Vec<String>,
    /// `Some(i)`: informational row `i`; `None`: the policy variable.
    pub rows: Vec<Option<usize>>,
    pub records: Vec<StdRecord>,
    pub tcodes: Vec<Tcode>,
}

impl ResponseMap {
    pub fn from_panel(panel: &Panel) -> Self {
        let p = panel.policy_index();
        let mut row = 0;
        let rows = (0..panel.n_series())
            .map(|j| {
                if j == p {
                    None
                } else {
                    row += 1;
                    Some(row - 1)
                }
            })
            .collect();
        ResponseMap {
            names: panel.meta.iter().map(|m| m.name.clone()).collect(),
            rows,
            records: panel.standardization.clone(),
            tcodes: panel.meta.iter().map(|m| m.tcode).collect(),
        }
    }

    /// Keeps only the named variables, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let mut out = ResponseMap { names: vec![], rows: vec![], records: vec![], tcodes: vec![] };
        for n in names {
            let j = self
                .names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| FavarError::InvalidSpec(format!("unknown variable '{n}'")))?;
            out.names.push(self.names[j].clone());
            out.rows.push(self.rows[j]);
            out.records.push(self.records[j]);
            out.tcodes.push(self.tcodes[j]);
        }
        Ok(out)
    }

    /// Responses of every mapped variable for one parameter draw.
    pub fn responses(&self, state_irf: &DMatrix<f64>, params: &FavarParams, units: Units) -> Result<DMatrix<f64>> {
        let k = params.factors();
        let h = state_irf.nrows();
        let mut out = DMatrix::<f64>::zeros(h, self.names.len());
        for (c, row) in self.rows.iter().enumerate() {
            let mut col: Vec<f64> = match row {
                Some(i) => {
                    if *i >= params.n_series() {
                        return Err(FavarError::Dimension(format!("series row {i} out of range")));
                    }
                    (0..h)
                        .map(|t| {
                            let mut v = 0.0;
                            for j in 0..k {
                                v += params.lambda_f[(*i, j)] * state_irf[(t, j)];
                            }
                            for j in 0..params.observables() {
                                v += params.lambda_y[(*i, j)] * state_irf[(t, k + j)];
                            }
                            v
                        })
                        .collect()
                }
                None => state_irf.column(k).iter().copied().collect(),
            };
            convert_units(&mut col, &self.records[c], self.tcodes[c], units);
            out.column_mut(c).copy_from_slice(&col);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrfSettings {
    pub horizon: usize,
    pub shock_size: f64,
    pub lower_quantile: f64,
    pub upper_quantile: f64,
    pub units: Units,
}

impl Default for IrfSettings {
    fn default() -> Self {
        IrfSettings {
            horizon: 40,
            shock_size: 0.25,
            lower_quantile: 0.025,
            upper_quantile: 0.975,
            units: Units::Native,
        }
    }
}

impl IrfSettings {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.lower_quantile, self.upper_quantile);
        if !(0.0 < lo && lo <= 0.5 && 0.5 <= hi && hi < 1.0) {
            return Err(FavarError::InvalidSpec(format!(
                "quantiles must satisfy 0 < lower <= 0.5 <= upper < 1, got ({lo}, {hi})"
            )));
        }
        if !self.shock_size.is_finite() {
            return Err(FavarError::InvalidSpec("shock size must be finite".into()));
        }
        Ok(())
    }
}

/// Pointwise posterior median and quantile bands.
#[derive(Debug, Clone, PartialEq)]
pub struct IrfBands {
    pub variables: Vec<String>,
    pub horizon: usize,
    pub median: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub units: Units,
    pub shock_description: String,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

/// Band summary of a stack of response matrices (one per draw).
pub fn bands_from_draws(
    draws: &[DMatrix<f64>],
    variables: Vec<String>,
    settings: &IrfSettings,
    shock_description: String,
) -> Result<IrfBands> {
    settings.validate()?;
    let first = draws
        .first()
        .ok_or_else(|| FavarError::Data("cannot form bands from an empty chain".into()))?;
    let (h, n) = first.shape();
    let mut median = DMatrix::zeros(h, n);
    let mut lower = DMatrix::zeros(h, n);
    let mut upper = DMatrix::zeros(h, n);
    let mut buf = vec![0.0; draws.len()];
    for i in 0..h {
        for j in 0..n {
            for (b, d) in buf.iter_mut().zip(draws) {
                *b = d[(i, j)];
            }
            buf.sort_by(f64::total_cmp);
            median[(i, j)] = quantile(&buf, 0.5);
            lower[(i, j)] = quantile(&buf, settings.lower_quantile).min(median[(i, j)]);
            upper[(i, j)] = quantile(&buf, settings.upper_quantile).max(median[(i, j)]);
        }
    }
    Ok(IrfBands {
        variables,
        horizon: h - 1,
        median,
        lower,
        upper,
        units: settings.units,
        shock_description,
    })
}

/// Response matrices (horizons × variables) for every draw in the chain.
pub fn draw_responses(
    chain: &PosteriorChain,
    map: &ResponseMap,
    settings: &IrfSettings,
) -> Result<Vec<DMatrix<f64>>> {
    chain
        .params
        .iter()
        .map(|p| {
            let state = structural_irf(
                &p.companion(),
                &p.sigma,
                p.factors() + p.observables() - 1,
                settings.horizon,
                settings.shock_size,
            )?;
            map.responses(&state, p, settings.units)
        })
        .collect()
}

pub fn posterior_bands(
    chain: &PosteriorChain,
    map: &ResponseMap,
    settings: &IrfSettings,
    policy_name: &str,
) -> Result<IrfBands> {
    if chain.params.is_empty() {
        return Err(FavarError::Data("posterior chain is empty".into()));
    }
    let draws = draw_responses(chain, map, settings)?;
    bands_from_draws(&draws, map.names.clone(), settings, shock_label(policy_name, settings.shock_size))
}

pub fn shock_label(policy_name: &str, size: f64) -> String {
    format!("{policy_name} {size:+}")
}

impl IrfBands {
    /// CSV with columns `variable,horizon,median,lower,upper,units,shock`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable,horizon,median,lower,upper,units,shock\n");
        for (j, name) in self.variables.iter().enumerate() {
            for h in 0..=self.horizon {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    name,
                    h,
                    self.median[(h, j)],
                    self.lower[(h, j)],
                    self.upper[(h, j)],
                    self.units.as_str(),
                    self.shock_description
                )
                .expect("writing to String");
            }
        }
        out
    }

    /// SVG grid, one panel per variable: solid median, dashed bands.
    pub fn to_svg(&self, columns: usize) -> String {
        let columns = columns.max(1);
        let (pw, ph, pad) = (260.0, 180.0, 36.0);
        let n = self.variables.len();
        let rows = n.div_ceil(columns).max(1);
        let width = columns as f64 * pw;
        let height = rows as f64 * ph + 30.0;
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="8" y="18" font-size="13">Responses to {} ({} units, {} quarters)</text>"#,
            xml_escape(&self.shock_description),
            self.units.as_str(),
            self.horizon
        )
        .unwrap();
        for j in 0..n {
            let ox = (j % columns) as f64 * pw;
            let oy = 30.0 + (j / columns) as f64 * ph;
            let (x0, x1) = (ox + pad, ox + pw - 10.0);
            let (y0, y1) = (oy + 20.0, oy + ph - 20.0);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for h in 0..=self.horizon {
                lo = lo.min(self.lower[(h, j)]).min(0.0);
                hi = hi.max(self.upper[(h, j)]).max(0.0);
            }
            if !(hi > lo) {
                lo -= 1.0;
                hi += 1.0;
            }
            let hx = |h: usize| x0 + (x1 - x0) * h as f64 / self.horizon.max(1) as f64;
            let vy = |v: f64| y1 - (y1 - y0) * (v - lo) / (hi - lo);
            let path = |m: &DMatrix<f64>| {
                (0..=self.horizon)
                    .map(|h| format!("{:.2},{:.2}", hx(h), vy(m[(h, j)])))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            writeln!(s, r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#bbb"/>"##, x1 - x0, y1 - y0).unwrap();
            writeln!(s, r##"<line x1="{x0}" y1="{0:.2}" x2="{x1}" y2="{0:.2}" stroke="#999" stroke-width="0.5"/>"##, vy(0.0)).unwrap();
            writeln!(s, r#"<text x="{x0}" y="{}">{}</text>"#, y0 - 5.0, xml_escape(&self.variables[j])).unwrap();
            writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 3.0, y0 + 4.0, fmt_tick(hi)).unwrap();
            writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 3.0, y1, fmt_tick(lo)).unwrap();
            for band in [&self.lower, &self.upper] {
                writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f4e9c" stroke-dasharray="4,3"/>"##, path(band)).unwrap();
            }
            writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f4e9c" stroke-width="1.5"/>"##, path(&self.median)).unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.3}")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn single_lag_companion_is_the_coefficient_matrix() {
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        let (a, sel) = build_companion(&[g.clone()], &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(a, g);
        assert_eq!(sel, DMatrix::identity(2, 2));
    }

    #[test]
    fn zero_coefficients_give_shift_matrix() {
        let z = DMatrix::zeros(2, 2);
        let a = companion_matrix(&[z.clone(), z.clone(), z]);
        for i in 0..6 {
            for j in 0..6 {
                let want = if i >= 2 && j == i - 2 { 1.0 } else { 0.0 };
                assert_eq!(a[(i, j)], want);
            }
        }
    }

    #[test]
    fn scalar_geometric_decay() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let irf = structural_irf(&a, &DMatrix::from_element(1, 1, 2.0), 0, 5, 1.0).unwrap();
        for h in 0..=5 {
            assert!((irf[(h, 0)] - 0.5f64.powi(h as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_sigma_has_no_impact_on_factors() {
        let g = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.2, 0.0, 0.4, 0.1, 0.3, 0.0, 0.6]);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let irf = structural_irf(&g, &sigma, 2, 4, 0.25).unwrap();
        assert_eq!(irf[(0, 0)], 0.0);
        assert_eq!(irf[(0, 1)], 0.0);
        assert!((irf[(0, 2)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn policy_must_be_last() {
        let a = DMatrix::identity(2, 2) * 0.5;
        assert!(structural_irf(&a, &DMatrix::identity(2, 2), 0, 3, 1.0).is_err());
    }

    #[test]
    fn level_cumulates_native() {
        let params = FavarParams {
            lambda_f: DMatrix::from_element(1, 1, 1.0),
            lambda_y: DMatrix::zeros(1, 1),
            idio_var: DVector::from_element(1, 1.0),
            var_coeffs: vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.5])],
            sigma: DMatrix::identity(2, 2),
        };
        let st = structural_irf(&params.companion(), &params.sigma, 1, 6, 0.25).unwrap();
        let rec = [StdRecord { mean: 0.0, stddev: 2.0 }];
        let tc = [Tcode::new(5).unwrap()];
        let native = observable_irf(&st, &params, &rec, &tc, Units::Native).unwrap();
        let level = observable_irf(&st, &params, &rec, &tc, Units::Level).unwrap();
        let mut acc = 0.0;
        for h in 0..=6 {
            acc += native[(h, 0)];
            assert!((level[(h, 0)] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}
