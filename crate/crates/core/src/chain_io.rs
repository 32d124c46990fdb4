//! On-disk format for posterior chains: a JSON manifest plus one CSV per
//! parameter block, one row per retained draw.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FavarError, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::gibbs::PosteriorChain;
use crate::model::{FavarParams, ModelSpec};

pub const MANIFEST: &str = "manifest.json";
const LAMBDA_F: &str = "lambda_f.csv";
const LAMBDA_Y: &str = "lambda_y.csv";
const IDIO: &str = "idio_var.csv";
const VAR: &str = "var_coeffs.csv";
const SIGMA: &str = "sigma.csv";
const FACTORS: &str = "factors.csv";
const LOGLIK: &str = "loglik.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub spec: ModelSpec,
    pub chain_index: u64,
    pub draws: usize,
    pub periods: usize,
    pub series_names: Vec<String>,
    pub slow: Vec<bool>,
    pub policy_name: String,
    pub stationarity_rejections: usize,
}

fn push_row(out: &mut String, lead: &[usize], values: impl Iterator<Item = f64>) {
    let mut first = true;
    for l in lead {
        if !first {
            out.push(',');
        }
        first = false;
        let _ = write!(out, "{l}");
    }
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

fn header(lead: &[&str], names: impl Iterator<Item = String>) -> String {
    let mut cols: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    cols.extend(names);
    let mut h = cols.join(",");
    h.push('\n');
    h
}

/// Row-major flattening of a matrix.
fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

fn matrix_names(prefix: &str, rows: usize, cols: usize) -> impl Iterator<Item = String> + '_ {
    (0..rows).flat_map(move |i| (0..cols).map(move |j| format!("{prefix}_{i}_{j}")))
}

pub fn write_chain(dir: &Path, chain: &PosteriorChain) -> Result<()> {
    let first = chain
        .params
        .first()
        .ok_or_else(|| FavarError::Data("cannot write an empty chain".into()))?;
    let (n, k, m, d) = (first.n_series(), first.factors(), first.observables(), first.lags());
    let r = k + m;
    let periods = chain.factor_paths.first().map_or(0, |f| f.nrows());
    let manifest = ChainManifest {
        spec: chain.spec.clone(),
        chain_index: chain.chain_index,
        draws: chain.len(),
        periods,
        series_names: chain.series_names.clone(),
        slow: chain.slow.clone(),
        policy_name: chain.policy_name.clone(),
        stationarity_rejections: chain.stationarity_rejections,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| FavarError::Data(format!("serializing manifest: {e}")))?;

    let mut lf = header(&["draw"], matrix_names("lf", n, k));
    let mut ly = header(&["draw"], matrix_names("ly", n, m));
    let mut idio = header(&["draw"], (0..n).map(|i| format!("idio_{i}")));
    let mut var = header(
        &["draw"],
        (0..d).flat_map(|l| (0..r).flat_map(move |i| (0..r).map(move |j| format!("g{}_{i}_{j}", l + 1)))),
    );
    let mut sig = header(&["draw"], matrix_names("sigma", r, r));
    let mut fac = header(&["draw", "t"], (0..k).map(|j| format!("f{}", j + 1)));
    let mut ll = String::from("draw,loglik\n");
    for (s, p) in chain.params.iter().enumerate() {
        push_row(&mut lf, &[s], row_major(&p.lambda_f));
        push_row(&mut ly, &[s], row_major(&p.lambda_y));
        push_row(&mut idio, &[s], p.idio_var.iter().copied());
        push_row(&mut var, &[s], p.var_coeffs.iter().flat_map(row_major));
        push_row(&mut sig, &[s], row_major(&p.sigma));
        if let Some(f) = chain.factor_paths.get(s) {
            for t in 0..f.nrows() {
                push_row(&mut fac, &[s, t], f.row(t).iter().copied());
            }
        }
        if let Some(v) = chain.log_likelihoods.get(s) {
            push_row(&mut ll, &[s], std::iter::once(*v));
        }
    }
    for (name, body) in [
        (LAMBDA_F, lf),
        (LAMBDA_Y, ly),
        (IDIO, idio),
        (VAR, var),
        (SIGMA, sig),
        (FACTORS, fac),
        (LOGLIK, ll),
    ] {
        write_atomic(&dir.join(name), body.as_bytes())?;
    }
    // Manifest last, so a directory with a manifest is complete.
    write_atomic(&dir.join(MANIFEST), json.as_bytes())
}

/// Parses a block file into rows of numbers after the `lead` index columns,
/// checking the indices and the row width.
fn read_block(dir: &Path, name: &str, lead: usize, width: usize) -> Result<Vec<(Vec<usize>, Vec<f64>)>> {
    let path = dir.join(name);
    let text = read_to_string(&path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let perr = |line: usize, msg: String| FavarError::Parse(format!("{}:{line}: {msg}", path.display()));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FavarError::Parse(format!("{}: {e}", path.display())))?;
        if rec.len() != lead + width {
            return Err(perr(i + 2, format!("expected {} fields, found {}", lead + width, rec.len())));
        }
        let idx = rec
            .iter()
            .take(lead)
            .map(|s| s.parse::<usize>().map_err(|e| perr(i + 2, format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let vals = rec
            .iter()
            .skip(lead)
            .map(|s| s.parse::<f64>().map_err(|e| perr(i + 2, format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push((idx, vals));
    }
    Ok(out)
}

fn per_draw(dir: &Path, name: &str, width: usize, draws: usize) -> Result<Vec<Vec<f64>>> {
    let rows = read_block(dir, name, 1, width)?;
    if rows.len() != draws {
        return Err(FavarError::Data(format!("{name}: expected {draws} draws, found {}", rows.len())));
    }
    rows.into_iter()
        .enumerate()
        .map(|(s, (idx, v))| {
            if idx[0] != s {
                Err(FavarError::Data(format!("{name}: draw {} out of order", idx[0])))
            } else {
                Ok(v)
            }
        })
        .collect()
}

pub fn read_manifest(dir: &Path) -> Result<ChainManifest> {
    let path = dir.join(MANIFEST);
    serde_json::from_str(&read_to_string(&path)?)
        .map_err(|e| FavarError::Parse(format!("{}: {e}", path.display())))
}

pub fn read_chain(dir: &Path) -> Result<PosteriorChain> {
    let man = read_manifest(dir)?;
    let spec = &man.spec;
    let (n, k, m, d) = (man.series_names.len(), spec.factors, spec.observables, spec.lags);
    let r = k + m;
    let draws = man.draws;
    if man.slow.len() != n {
        return Err(FavarError::Data("manifest: slow flags do not match series names".into()));
    }
    let lf = per_draw(dir, LAMBDA_F, n * k, draws)?;
    let ly = per_draw(dir, LAMBDA_Y, n * m, draws)?;
    let idio = per_draw(dir, IDIO, n, draws)?;
    let var = per_draw(dir, VAR, d * r * r, draws)?;
    let sig = per_draw(dir, SIGMA, r * r, draws)?;
    let ll = per_draw(dir, LOGLIK, 1, draws)?;
    let fac_rows = read_block(dir, FACTORS, 2, k)?;
    if fac_rows.len() != draws * man.periods {
        return Err(FavarError::Data(format!(
            "{FACTORS}: expected {} rows, found {}",
            draws * man.periods,
            fac_rows.len()
        )));
    }
    let mut params = Vec::with_capacity(draws);
    let mut factor_paths = Vec::with_capacity(draws);
    for s in 0..draws {
        let var_coeffs = (0..d)
            .map(|l| DMatrix::from_row_slice(r, r, &var[s][l * r * r..(l + 1) * r * r]))
            .collect();
        params.push(FavarParams {
            lambda_f: DMatrix::from_row_slice(n, k, &lf[s]),
            lambda_y: DMatrix::from_row_slice(n, m, &ly[s]),
            idio_var: DVector::from_vec(idio[s].clone()),
            var_coeffs,
            sigma: DMatrix::from_row_slice(r, r, &sig[s]),
        });
        let rows = &fac_rows[s * man.periods..(s + 1) * man.periods];
        let mut f = DMatrix::zeros(man.periods, k);
        for (t, (idx, vals)) in rows.iter().enumerate() {
            if idx[0] != s || idx[1] != t {
                return Err(FavarError::Data(format!("{FACTORS}: row ({}, {}) out of order", idx[0], idx[1])));
            }
            for (j, v) in vals.iter().enumerate() {
                f[(t, j)] = *v;
            }
        }
        factor_paths.push(f);
    }
    Ok(PosteriorChain {
        params,
        factor_paths,
        log_likelihoods: ll.into_iter().map(|v| v[0]).collect(),
        stationarity_rejections: man.stationarity_rejections,
        spec: man.spec,
        chain_index: man.chain_index,
        series_names: man.series_names,
        slow: man.slow,
        policy_name: man.policy_name,
    })
}
