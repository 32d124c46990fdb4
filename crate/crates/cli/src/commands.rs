//! The five pipeline commands. Each reads the config and the files written
//! by earlier commands, and writes its own outputs under the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use favar::chain_io::{read_chain, write_chain};
use favar::dgp::{generate_favar_dgp, DgpOutput};
use favar::fsutil::{read_to_string, write_atomic};
use favar::gibbs::{chain_diagnostics, MIN_DIAGNOSTIC_LENGTH};
use favar::impulse::{posterior_bands, shock_label, structural_irf};
use favar::panel::{load_panel, read_prepared, write_metadata_csv, write_prepared, write_raw_csv};
use favar::{
    run_chain, run_two_step, FavarError, IrfBands, ModelSpec, Panel, PosteriorChain, PrepareOptions,
    ResponseMap, Result,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};

pub const ESTIMATE_JSON: &str = "estimate.json";
pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const SCREENING_CSV: &str = "screening.csv";
pub const IRF_CSV: &str = "irf.csv";
pub const IRF_SVG: &str = "irf.svg";
pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainRecord {
    pub index: u64,
    /// Relative to the output directory.
    pub dir: PathBuf,
    pub draws: usize,
    pub stationarity_rejections: usize,
    pub mean_loglik: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub method: Method,
    pub spec: ModelSpec,
    pub chains: Vec<ChainRecord>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| FavarError::InvalidSpec(format!("cannot start {workers} workers: {e}")))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_prepare(cfg: &RunConfig) -> Result<(Panel, favar::PrepareReport)> {
    cfg.validate()?;
    let (data, meta) = cfg.data_paths()?;
    let (raw, metas) = load_panel(data, meta, cfg.monthly.as_deref())?;
    if !metas.iter().any(|m| m.name == cfg.policy) {
        return Err(FavarError::InvalidSpec(format!(
            "policy variable '{}' is not in the metadata",
            cfg.policy
        )));
    }
    for v in &cfg.irf_variables {
        if !metas.iter().any(|m| &m.name == v) {
            return Err(FavarError::InvalidSpec(format!("irf variable '{v}' is not in the metadata")));
        }
    }
    let options = PrepareOptions { policy_name: cfg.policy.clone(), adf_max_lag: cfg.adf_max_lag };
    let (panel, report) = favar::panel::prepare(&raw, &metas, &options)?;
    let dir = cfg.prepared_dir();
    write_prepared(&dir, &panel, &report)?;

    let mut out = String::from(
        "variable,tcode,speed,seasonally_adjusted,interpolated,adf_statistic,adf_lags,critical_5pct,reject_unit_root_5pct,note\n",
    );
    for e in &report.entries {
        let speed = match e.speed {
            favar::panel::Speed::Slow => "slow",
            favar::panel::Speed::Fast => "fast",
        };
        let (stat, lags, crit, reject) = match &e.adf {
            Some(a) => (
                a.statistic.to_string(),
                a.lags_used.to_string(),
                a.critical_5.to_string(),
                a.reject_unit_root_5pct.to_string(),
            ),
            None => Default::default(),
        };
        writeln!(
            out,
            "{},{},{speed},{},{},{stat},{lags},{crit},{reject},{}",
            csv_field(&e.name),
            e.tcode,
            e.seasonally_adjusted,
            e.interpolated,
            csv_field(e.adf_error.as_deref().unwrap_or(""))
        )
        .expect("writing to String");
    }
    write_atomic(&dir.join(SCREENING_CSV), out.as_bytes())?;
    Ok((panel, report))
}

fn load_prepared(cfg: &RunConfig) -> Result<Panel> {
    let dir = cfg.prepared_dir();
    if !dir.join(favar::panel::PANEL_CSV).exists() {
        return Err(FavarError::Data(format!(
            "no prepared panel in {} (run `favar prepare` first)",
            dir.display()
        )));
    }
    Ok(read_prepared(&dir)?.0)
}

fn run_one(panel: &Panel, spec: &ModelSpec, method: Method, index: u64) -> Result<PosteriorChain> {
    match method {
        Method::OneStep => run_chain(panel, spec, index),
        Method::TwoStep => run_two_step(panel, spec, index),
    }
}

fn mean_loglik(chain: &PosteriorChain) -> Option<f64> {
    let v = &chain.log_likelihoods;
    let m = v.iter().sum::<f64>() / v.len() as f64;
    m.is_finite().then_some(m)
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<EstimateSummary> {
    cfg.validate()?;
    let panel = load_prepared(cfg)?;
    let spec = cfg.model_spec();
    spec.validate_for(&panel)?;
    if panel.policy_name != cfg.policy {
        return Err(FavarError::InvalidSpec(format!(
            "prepared panel uses policy '{}' but the config names '{}'",
            panel.policy_name, cfg.policy
        )));
    }

    let chains: Vec<PosteriorChain> = pool(cfg.workers)?.install(|| {
        (0..cfg.chains as u64)
            .into_par_iter()
            .map(|i| {
                eprintln!("chain {i}: {} draws", spec.n_draws);
                run_one(&panel, &spec, cfg.method, i).map_err(|e| chain_context(i, e))
            })
            .collect::<Result<_>>()
    })?;

    let mut records = Vec::new();
    let mut diag = String::from("chain,parameter,mean,stddev,geweke_z,flagged\n");
    let mut any_diag = false;
    for c in &chains {
        let rel = PathBuf::from("chains").join(format!("chain_{}", c.chain_index));
        write_chain(&cfg.output.join(&rel), c)?;
        records.push(ChainRecord {
            index: c.chain_index,
            dir: rel,
            draws: c.len(),
            stationarity_rejections: c.stationarity_rejections,
            mean_loglik: mean_loglik(c),
        });
        if c.len() >= MIN_DIAGNOSTIC_LENGTH {
            any_diag = true;
            for s in chain_diagnostics(c)? {
                writeln!(
                    diag,
                    "{},{},{},{},{},{}",
                    c.chain_index,
                    csv_field(&s.name),
                    s.mean,
                    s.stddev,
                    s.geweke_z,
                    s.flagged
                )
                .expect("writing to String");
            }
        } else {
            eprintln!(
                "chain {}: {} retained draws, fewer than {MIN_DIAGNOSTIC_LENGTH}; diagnostics skipped",
                c.chain_index,
                c.len()
            );
        }
    }
    let diag_path = cfg.output.join(DIAGNOSTICS_CSV);
    if any_diag {
        write_atomic(&diag_path, diag.as_bytes())?;
    } else if diag_path.exists() {
        std::fs::remove_file(&diag_path).map_err(|e| FavarError::io(&diag_path, e))?;
    }
    let summary = EstimateSummary { method: cfg.method, spec, chains: records };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| FavarError::Data(format!("serializing estimate summary: {e}")))?;
    write_atomic(&cfg.output.join(ESTIMATE_JSON), json.as_bytes())?;
    Ok(summary)
}

fn chain_context(i: u64, e: FavarError) -> FavarError {
    let msg = format!("chain {i}: {e}");
    match e.category() {
        favar::ErrorCategory::Config => FavarError::InvalidSpec(msg),
        favar::ErrorCategory::Data => FavarError::Data(msg),
        favar::ErrorCategory::Numerical => FavarError::Numerical(msg),
    }
}

/// Reads every chain listed by the last `estimate` run and pools the draws.
pub fn load_pooled_chain(cfg: &RunConfig) -> Result<PosteriorChain> {
    let path = cfg.output.join(ESTIMATE_JSON);
    if !path.exists() {
        return Err(FavarError::Data(format!(
            "no estimation results at {} (run `favar estimate` first)",
            path.display()
        )));
    }
    let summary: EstimateSummary = serde_json::from_str(&read_to_string(&path)?)
        .map_err(|e| FavarError::Parse(format!("{}: {e}", path.display())))?;
    let mut pooled: Option<PosteriorChain> = None;
    for rec in &summary.chains {
        let c = read_chain(&cfg.output.join(&rec.dir))?;
        match pooled.as_mut() {
            None => pooled = Some(c),
            Some(p) => {
                if p.series_names != c.series_names || p.spec.factors != c.spec.factors || p.spec.lags != c.spec.lags {
                    return Err(FavarError::Data(format!("chain {} does not match chain 0", rec.index)));
                }
                p.params.extend(c.params);
                p.factor_paths.extend(c.factor_paths);
                p.log_likelihoods.extend(c.log_likelihoods);
                p.stationarity_rejections += c.stationarity_rejections;
            }
        }
    }
    pooled.ok_or_else(|| FavarError::Data(format!("{} lists no chains", path.display())))
}

fn response_map(cfg: &RunConfig, panel: &Panel) -> Result<ResponseMap> {
    let map = ResponseMap::from_panel(panel);
    if cfg.irf_variables.is_empty() {
        Ok(map)
    } else {
        map.select(&cfg.irf_variables)
    }
}

pub fn cmd_irf(cfg: &RunConfig) -> Result<IrfBands> {
    cfg.validate()?;
    let panel = load_prepared(cfg)?;
    let map = response_map(cfg, &panel)?;
    let chain = load_pooled_chain(cfg)?;
    let x_names: Vec<String> = panel.x_meta().iter().map(|m| m.name.clone()).collect();
    if chain.series_names != x_names {
        return Err(FavarError::Data("stored chain does not match the prepared panel".into()));
    }
    let bands = posterior_bands(&chain, &map, &cfg.irf_settings(), &panel.policy_name)?;
    write_atomic(&cfg.output.join(IRF_CSV), bands.to_csv().as_bytes())?;
    write_atomic(&cfg.output.join(IRF_SVG), bands.to_svg(cfg.plot_columns).as_bytes())?;
    Ok(bands)
}

/// True responses of every panel series implied by the simulated parameters.
pub fn true_irf(cfg: &RunConfig, dgp: &DgpOutput) -> Result<IrfBands> {
    let settings = cfg.irf_settings();
    let p = &dgp.params;
    let state = structural_irf(
        &p.companion(),
        &p.sigma,
        p.factors() + p.observables() - 1,
        settings.horizon,
        settings.shock_size,
    )?;
    let map = ResponseMap::from_panel(&dgp.panel);
    let resp = map.responses(&state, p, settings.units)?;
    Ok(IrfBands {
        variables: map.names,
        horizon: settings.horizon,
        median: resp.clone(),
        lower: resp.clone(),
        upper: resp,
        units: settings.units,
        shock_description: shock_label(&dgp.panel.policy_name, settings.shock_size),
    })
}

/// Matrices as lists of rows.
#[derive(Serialize)]
struct ParamsJson {
    lambda_f: Vec<Vec<f64>>,
    lambda_y: Vec<Vec<f64>>,
    idio_var: Vec<f64>,
    var_coeffs: Vec<Vec<Vec<f64>>>,
    sigma: Vec<Vec<f64>>,
}

impl ParamsJson {
    fn new(p: &favar::FavarParams) -> Self {
        fn rows<M: std::ops::Index<(usize, usize), Output = f64>>(m: &M, r: usize, c: usize) -> Vec<Vec<f64>> {
            (0..r).map(|i| (0..c).map(|j| m[(i, j)]).collect()).collect()
        }
        let (n, k) = p.lambda_f.shape();
        let r = p.sigma.nrows();
        ParamsJson {
            lambda_f: rows(&p.lambda_f, n, k),
            lambda_y: rows(&p.lambda_y, n, p.lambda_y.ncols()),
            idio_var: p.idio_var.iter().copied().collect(),
            var_coeffs: p.var_coeffs.iter().map(|g| rows(g, r, r)).collect(),
            sigma: rows(&p.sigma, r, r),
        }
    }
}

#[derive(Serialize)]
struct Truth {
    standardized: ParamsJson,
    raw: ParamsJson,
}

pub const SIM_DATA: &str = "data.csv";
pub const SIM_METADATA: &str = "metadata.csv";

pub fn cmd_simulate(cfg: &RunConfig) -> Result<DgpOutput> {
    cfg.validate()?;
    let spec = cfg.dgp_spec();
    spec.validate()?;
    let dgp = generate_favar_dgp(&spec)?;
    let out = &cfg.output;
    write_raw_csv(&out.join(SIM_DATA), &dgp.raw[0].dates, &dgp.raw)?;
    write_metadata_csv(&out.join(SIM_METADATA), &dgp.meta)?;

    let truth = out.join("truth");
    let json = serde_json::to_string_pretty(&Truth { standardized: ParamsJson::new(&dgp.params), raw: ParamsJson::new(&dgp.raw_params) })
        .map_err(|e| FavarError::Data(format!("serializing truth: {e}")))?;
    write_atomic(&truth.join("params.json"), json.as_bytes())?;

    let mut fac = String::from("date");
    for j in 0..spec.k {
        write!(fac, ",f{}", j + 1).expect("writing to String");
    }
    fac.push('\n');
    for (i, d) in dgp.panel.dates.iter().enumerate() {
        write!(fac, "{d}").expect("writing to String");
        for j in 0..spec.k {
            write!(fac, ",{}", dgp.factors[(i, j)]).expect("writing to String");
        }
        fac.push('\n');
    }
    write_atomic(&truth.join("factors.csv"), fac.as_bytes())?;
    write_atomic(&truth.join(IRF_CSV), true_irf(cfg, &dgp)?.to_csv().as_bytes())?;
    Ok(dgp)
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub factors: usize,
    pub lags: usize,
    pub outcome: std::result::Result<(PosteriorChain, IrfBands), String>,
}

pub fn cmd_sweep(cfg: &RunConfig, factors: &[usize], lags: &[usize]) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    let panel = load_prepared(cfg)?;
    let map = response_map(cfg, &panel)?;
    let settings = cfg.irf_settings();
    let mut grid = Vec::new();
    for &k in factors {
        for &d in lags {
            let spec = ModelSpec { factors: k, lags: d, ..cfg.model_spec() };
            spec.validate_for(&panel)
                .map_err(|e| FavarError::InvalidSpec(format!("sweep cell K={k}, d={d}: {e}")))?;
            grid.push(spec);
        }
    }
    let cells: Vec<SweepCell> = pool(cfg.workers)?.install(|| {
        grid.par_iter()
            .map(|spec| {
                let outcome = run_one(&panel, spec, cfg.method, 0).and_then(|chain| {
                    let bands = posterior_bands(&chain, &map, &settings, &panel.policy_name)?;
                    Ok((chain, bands))
                });
                let outcome = outcome.map_err(|e| {
                    eprintln!("sweep cell K={}, d={}: {e}", spec.factors, spec.lags);
                    e.to_string()
                });
                SweepCell { factors: spec.factors, lags: spec.lags, outcome }
            })
            .collect()
    });

    let dir = cfg.output.join("sweep");
    let baseline = cells
        .iter()
        .find(|c| c.factors == cfg.factors && c.lags == cfg.lags)
        .or_else(|| cells.first())
        .and_then(|c| c.outcome.as_ref().ok())
        .map(|(_, b)| b.median.clone());
    let mut report = String::from(
        "factors,lags,status,draws,mean_loglik,stationarity_rejections,mean_band_width,rms_gap_to_baseline\n",
    );
    for c in &cells {
        match &c.outcome {
            Ok((chain, bands)) => {
                write_atomic(
                    &dir.join(format!("irf_K{}_d{}.csv", c.factors, c.lags)),
                    bands.to_csv().as_bytes(),
                )?;
                let width = (&bands.upper - &bands.lower).mean();
                let gap = baseline
                    .as_ref()
                    .map(|b| ((&bands.median - b).norm_squared() / b.len() as f64).sqrt());
                writeln!(
                    report,
                    "{},{},ok,{},{},{},{},{}",
                    c.factors,
                    c.lags,
                    chain.len(),
                    opt(mean_loglik(chain)),
                    chain.stationarity_rejections,
                    width,
                    opt(gap)
                )
                .expect("writing to String");
            }
            Err(msg) => {
                writeln!(report, "{},{},{},,,,,", c.factors, c.lags, csv_field(&format!("failed: {msg}")))
                    .expect("writing to String");
            }
        }
    }
    write_atomic(&dir.join(SWEEP_CSV), report.as_bytes())?;
    Ok(cells)
}

/// Maps an error onto the process exit code.
pub fn exit_code(e: &FavarError) -> i32 {
    match e.category() {
        favar::ErrorCategory::Config => 2,
        favar::ErrorCategory::Data => 3,
        favar::ErrorCategory::Numerical => 4,
    }
}

pub fn output_dir_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FavarError::InvalidSpec(format!(
        "output directory {} is not writable: {e}",
        dir.display()
    )))
}
