//! CSV formats for raw and prepared panels.
//!
//! Raw data: header `date,<name>,...`, one row per quarter labelled `YYYYQn`,
//! empty cells for gaps. Annual series hold one value per year in any quarter
//! row of that year. Monthly series live in a separate file with `YYYY-MM`
//! labels and are aggregated to quarters on load.
//!
//! Metadata: header `name,tcode,speed,interpolation,seasonal,native_frequency`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    aggregate_monthly, Interpolation, NativeFrequency, Panel, PrepareReport, Quarter, RawSeries,
    Speed, StdRecord, Tcode, VariableMeta,
};
use crate::error::{FavarError, Result};
use crate::fsutil::{read_to_string, write_atomic};

const META_FIELDS: [&str; 6] = ["name", "tcode", "speed", "interpolation", "seasonal", "native_frequency"];

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn csv_err(path: &Path, e: csv::Error) -> FavarError {
    FavarError::Parse(format!("{}: {e}", path.display()))
}

fn parse_cell(cell: &str, name: &str, row: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| FavarError::Parse(format!("'{name}' at {row}: cannot parse '{cell}'")))?;
    if !v.is_finite() {
        return Err(FavarError::Parse(format!("'{name}' at {row}: non-finite value")));
    }
    Ok(Some(v))
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn parse_enum<T: for<'de> Deserialize<'de>>(s: &str, what: &str, name: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| FavarError::Parse(format!("metadata for '{name}': invalid {what} '{s}'")))
}

fn read_metadata(path: &Path) -> Result<Vec<VariableMeta>> {
    let text = read_to_string(path)?;
    let mut rdr = reader(&text);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    for h in &headers {
        if !META_FIELDS.contains(&h.as_str()) {
            return Err(FavarError::Parse(format!("unknown metadata field '{h}'")));
        }
    }
    let col = |f: &str| {
        headers
            .iter()
            .position(|h| h == f)
            .ok_or_else(|| FavarError::Parse(format!("metadata is missing field '{f}'")))
    };
    let idx: Vec<usize> = META_FIELDS.iter().map(|f| col(f)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let get = |k: usize| rec.get(idx[k]).unwrap_or("");
        let name = get(0).to_string();
        if !seen.insert(name.clone()) {
            return Err(FavarError::Data(format!("duplicate metadata row for '{name}'")));
        }
        let tcode: u8 = get(1)
            .parse()
            .map_err(|_| FavarError::Parse(format!("metadata for '{name}': bad tcode '{}'", get(1))))?;
        let meta = VariableMeta {
            tcode: Tcode::new(tcode)
                .map_err(|e| FavarError::Data(format!("metadata for '{name}': {e}")))?,
            speed: parse_enum::<Speed>(get(2), "speed", &name)?,
            interpolation: parse_enum::<Interpolation>(get(3), "interpolation", &name)?,
            seasonal: parse_bool(get(4)).ok_or_else(|| {
                FavarError::Parse(format!("metadata for '{name}': bad seasonal flag '{}'", get(4)))
            })?,
            native_frequency: parse_enum::<NativeFrequency>(get(5), "native_frequency", &name)?,
            name,
        };
        meta.validate()?;
        out.push(meta);
    }
    Ok(out)
}

struct Table {
    labels: Vec<String>,
    names: Vec<String>,
    columns: Vec<Vec<Option<f64>>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = read_to_string(path)?;
    let mut rdr = reader(&text);
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.get(0) != Some("date") {
        return Err(FavarError::Parse(format!(
            "{}: first column must be 'date'",
            path.display()
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut seen = HashSet::new();
    for n in &names {
        if !seen.insert(n) {
            return Err(FavarError::Data(format!("duplicate variable name '{n}'")));
        }
    }
    let mut labels = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let label = rec.get(0).unwrap_or("").to_string();
        for (j, name) in names.iter().enumerate() {
            columns[j].push(parse_cell(rec.get(j + 1).unwrap_or(""), name, &label)?);
        }
        labels.push(label);
    }
    Ok(Table { labels, names, columns })
}

fn consecutive_quarters(labels: &[String]) -> Result<Vec<Quarter>> {
    let dates: Vec<Quarter> = labels.iter().map(|l| l.parse()).collect::<Result<_>>()?;
    for w in dates.windows(2) {
        if w[0].distance_to(w[1]) != 1 {
            return Err(FavarError::Data(format!(
                "dates must be consecutive quarters: {} followed by {}",
                w[0], w[1]
            )));
        }
    }
    Ok(dates)
}

/// Monthly columns, aggregated onto `dates`.
fn monthly_onto(
    path: &Path,
    dates: &[Quarter],
    meta: &HashMap<&str, &VariableMeta>,
) -> Result<Vec<RawSeries>> {
    let table = read_table(path)?;
    let months: Vec<(i32, u32)> = table
        .labels
        .iter()
        .map(|l| {
            let bad = || FavarError::Parse(format!("unparseable month label '{l}' (expected YYYY-MM)"));
            let (y, m) = l.split_once('-').ok_or_else(bad)?;
            let y: i32 = y.parse().map_err(|_| bad())?;
            let m: u32 = m.parse().map_err(|_| bad())?;
            if !(1..=12).contains(&m) || y < 0 {
                return Err(bad());
            }
            Ok((y, m))
        })
        .collect::<Result<_>>()?;
    for w in months.windows(2) {
        if (w[1].0 * 12 + w[1].1 as i32) - (w[0].0 * 12 + w[0].1 as i32) != 1 {
            return Err(FavarError::Data("monthly dates must be consecutive".into()));
        }
    }
    let mut out = Vec::new();
    for (name, col) in table.names.iter().zip(&table.columns) {
        let m = meta
            .get(name.as_str())
            .ok_or_else(|| FavarError::Data(format!("no metadata row for variable '{name}'")))?;
        if m.native_frequency != NativeFrequency::Monthly {
            return Err(FavarError::Data(format!(
                "variable '{name}' is in the monthly file but not declared monthly"
            )));
        }
        let mode = m.interpolation.mode().expect("validated monthly meta has a mode");
        // Pad to whole quarters starting at a January/April/July/October.
        let lead = months.first().map_or(0, |(_, mo)| ((mo - 1) % 3) as usize);
        let mut padded = vec![None; lead];
        padded.extend(col.iter().copied());
        let first_q = months
            .first()
            .map(|(y, mo)| Quarter::new(*y, ((mo - 1) / 3 + 1) as u8))
            .transpose()?;
        let quarterly = aggregate_monthly(&padded, mode);
        let values = dates
            .iter()
            .map(|d| {
                first_q.and_then(|q0| {
                    let k = q0.distance_to(*d);
                    (k >= 0).then(|| quarterly.get(k as usize).copied().flatten()).flatten()
                })
            })
            .collect();
        out.push(RawSeries { name: name.clone(), dates: dates.to_vec(), values });
    }
    Ok(out)
}

/// Loads the raw quarterly data file (plus an optional monthly file) and the
/// metadata, returning series in file column order with matching metadata.
pub fn load_panel(
    data_path: &Path,
    meta_path: &Path,
    monthly_path: Option<&Path>,
) -> Result<(Vec<RawSeries>, Vec<VariableMeta>)> {
    let metas = read_metadata(meta_path)?;
    let by_name: HashMap<&str, &VariableMeta> = metas.iter().map(|m| (m.name.as_str(), m)).collect();
    let table = read_table(data_path)?;
    let dates = consecutive_quarters(&table.labels)?;
    let mut series = Vec::new();
    for (name, values) in table.names.iter().zip(table.columns) {
        let m = by_name
            .get(name.as_str())
            .ok_or_else(|| FavarError::Data(format!("no metadata row for variable '{name}'")))?;
        if m.native_frequency == NativeFrequency::Monthly {
            return Err(FavarError::Data(format!(
                "monthly variable '{name}' belongs in the monthly data file"
            )));
        }
        series.push(RawSeries { name: name.clone(), dates: dates.clone(), values });
    }
    if let Some(mp) = monthly_path {
        series.extend(monthly_onto(mp, &dates, &by_name)?);
    }
    let mut seen = HashSet::new();
    for s in &series {
        if !seen.insert(s.name.as_str()) {
            return Err(FavarError::Data(format!("duplicate variable name '{}'", s.name)));
        }
    }
    for m in &metas {
        if !seen.contains(m.name.as_str()) {
            return Err(FavarError::Data(format!(
                "metadata references variable '{}' which is absent from the data",
                m.name
            )));
        }
    }
    let ordered = series.iter().map(|s| (*by_name[s.name.as_str()]).clone()).collect();
    Ok((series, ordered))
}

/// Reads a monthly file and aggregates it onto the quarterly index `dates`.
pub fn load_monthly(
    path: &Path,
    dates: &[Quarter],
    meta: &[VariableMeta],
) -> Result<Vec<RawSeries>> {
    let by_name: HashMap<&str, &VariableMeta> = meta.iter().map(|m| (m.name.as_str(), m)).collect();
    monthly_onto(path, dates, &by_name)
}

fn fmt_value(out: &mut String, v: f64) {
    // Shortest round-trip representation; exact on reload.
    write!(out, "{v}").expect("writing to String");
}

pub fn write_raw_csv(path: &Path, dates: &[Quarter], series: &[RawSeries]) -> Result<()> {
    let mut out = String::from("date");
    for s in series {
        out.push(',');
        out.push_str(&s.name);
    }
    out.push('\n');
    for (i, d) in dates.iter().enumerate() {
        write!(out, "{d}").expect("writing to String");
        for s in series {
            out.push(',');
            if let Some(v) = s.values[i] {
                fmt_value(&mut out, v);
            }
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_metadata_csv(path: &Path, meta: &[VariableMeta]) -> Result<()> {
    let mut out = META_FIELDS.join(",");
    out.push('\n');
    for m in meta {
        let e = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            m.name,
            m.tcode.code(),
            e(serde_json::to_value(m.speed).expect("enum")),
            e(serde_json::to_value(m.interpolation).expect("enum")),
            m.seasonal,
            e(serde_json::to_value(m.native_frequency).expect("enum")),
        )
        .expect("writing to String");
    }
    write_atomic(path, out.as_bytes())
}

/// JSON sidecar written next to a prepared panel CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedSidecar {
    pub policy_name: String,
    pub meta: Vec<VariableMeta>,
    pub standardization: Vec<StdRecord>,
    pub report: PrepareReport,
}

pub const PANEL_CSV: &str = "panel.csv";
pub const PANEL_SIDECAR: &str = "panel.json";

/// Writes `panel.csv` and `panel.json` into `dir`.
pub fn write_prepared(dir: &Path, panel: &Panel, report: &PrepareReport) -> Result<()> {
    let mut out = String::from("date");
    for m in &panel.meta {
        out.push(',');
        out.push_str(&m.name);
    }
    out.push('\n');
    for (i, d) in panel.dates.iter().enumerate() {
        write!(out, "{d}").expect("writing to String");
        for j in 0..panel.n_series() {
            out.push(',');
            fmt_value(&mut out, panel.data[(i, j)]);
        }
        out.push('\n');
    }
    write_atomic(&dir.join(PANEL_CSV), out.as_bytes())?;
    let sidecar = PreparedSidecar {
        policy_name: panel.policy_name.clone(),
        meta: panel.meta.clone(),
        standardization: panel.standardization.clone(),
        report: report.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| FavarError::Data(format!("serializing sidecar: {e}")))?;
    write_atomic(&dir.join(PANEL_SIDECAR), json.as_bytes())
}

/// Reads a prepared panel back and re-checks its invariants.
pub fn read_prepared(dir: &Path) -> Result<(Panel, PreparedSidecar)> {
    let side_path = dir.join(PANEL_SIDECAR);
    let sidecar: PreparedSidecar = serde_json::from_str(&read_to_string(&side_path)?)
        .map_err(|e| FavarError::Parse(format!("{}: {e}", side_path.display())))?;
    let csv_path = dir.join(PANEL_CSV);
    let table = read_table(&csv_path)?;
    let dates = consecutive_quarters(&table.labels)?;
    let names: Vec<&str> = sidecar.meta.iter().map(|m| m.name.as_str()).collect();
    if table.names.iter().map(String::as_str).collect::<Vec<_>>() != names {
        return Err(FavarError::Data("prepared panel columns do not match its sidecar".into()));
    }
    let t = dates.len();
    let mut data = DMatrix::<f64>::zeros(t, names.len());
    for (j, col) in table.columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[(i, j)] = v.ok_or_else(|| {
                FavarError::Data(format!("prepared panel has a gap in '{}'", names[j]))
            })?;
        }
    }
    let panel = Panel {
        data,
        meta: sidecar.meta.clone(),
        dates,
        standardization: sidecar.standardization.clone(),
        policy_name: sidecar.policy_name.clone(),
    };
    panel.validate()?;
    Ok((panel, sidecar))
}
