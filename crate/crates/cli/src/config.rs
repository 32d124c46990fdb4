//! Run configuration: a flat TOML file whose defaults are the baseline model
//! (three factors, four lags, a 0.25 policy shock and 95% bands).

use std::path::{Path, PathBuf};

use favar::dgp::DgpSpec;
use favar::impulse::{IrfSettings, Units};
use favar::model::{ModelSpec, PriorSpec};
use favar::{FavarError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OneStep,
    TwoStep,
}

impl std::str::FromStr for Method {
    type Err = FavarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-step" => Ok(Method::OneStep),
            "two-step" => Ok(Method::TwoStep),
            _ => Err(FavarError::InvalidSpec(format!("unknown method '{s}' (one-step or two-step)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub monthly: Option<PathBuf>,
    pub output: PathBuf,
    pub policy: String,

    pub factors: usize,
    pub lags: usize,
    pub draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub seed: u64,
    pub method: Method,
    pub init_state_variance: f64,
    pub adf_max_lag: Option<usize>,

    pub loading_prior_variance: f64,
    pub idio_ig_shape: f64,
    pub idio_ig_scale: f64,
    pub var_coef_prior_variance: f64,
    pub sigma_iw_dof: Option<usize>,
    pub sigma_iw_scale: f64,
    pub enforce_stationarity: bool,
    pub stationarity_max_redraws: usize,

    pub shock_size: f64,
    pub horizon: usize,
    pub lower_quantile: f64,
    pub upper_quantile: f64,
    pub units: Units,
    /// Variables reported by `irf`; empty means all.
    pub irf_variables: Vec<String>,
    pub plot_columns: usize,

    pub sim_series: usize,
    pub sim_periods: usize,
    pub sim_factors: usize,
    pub sim_lags: usize,
    pub sim_noise: f64,
    pub sim_fraction_slow: f64,

    pub sweep_factors: Vec<usize>,
    pub sweep_lags: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = ModelSpec::default();
        let priors = PriorSpec::default();
        let irf = IrfSettings::default();
        let dgp = DgpSpec::default();
        RunConfig {
            data: None,
            metadata: None,
            monthly: None,
            output: PathBuf::from("out"),
            policy: favar::dgp::POLICY_NAME.to_string(),
            factors: spec.factors,
            lags: spec.lags,
            draws: spec.n_draws,
            burn_in: spec.burn_in,
            thin: spec.thin,
            chains: 1,
            workers: 0,
            seed: spec.seed,
            method: Method::OneStep,
            init_state_variance: spec.init_state_variance,
            adf_max_lag: None,
            loading_prior_variance: priors.loading_prior_variance,
            idio_ig_shape: priors.idio_ig_shape,
            idio_ig_scale: priors.idio_ig_scale,
            var_coef_prior_variance: priors.var_coef_prior_variance,
            sigma_iw_dof: priors.sigma_iw_dof,
            sigma_iw_scale: priors.sigma_iw_scale,
            enforce_stationarity: priors.enforce_stationarity,
            stationarity_max_redraws: priors.stationarity_max_redraws,
            shock_size: irf.shock_size,
            horizon: irf.horizon,
            lower_quantile: irf.lower_quantile,
            upper_quantile: irf.upper_quantile,
            units: irf.units,
            irf_variables: Vec::new(),
            plot_columns: 4,
            sim_series: dgp.n,
            sim_periods: dgp.t,
            sim_factors: dgp.k,
            sim_lags: dgp.d,
            sim_noise: dgp.idio_noise_scale,
            sim_fraction_slow: dgp.fraction_slow,
            sweep_factors: vec![1, 2, 3, 4, 5],
            sweep_lags: vec![2, 4],
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FavarError::InvalidSpec(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| FavarError::InvalidSpec(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        cfg.data = cfg.data.as_ref().map(resolve);
        cfg.metadata = cfg.metadata.as_ref().map(resolve);
        cfg.monthly = cfg.monthly.as_ref().map(resolve);
        cfg.output = resolve(&cfg.output);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.output {
            self.output = p.clone();
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
    }

    pub fn priors(&self) -> PriorSpec {
        PriorSpec {
            loading_prior_variance: self.loading_prior_variance,
            idio_ig_shape: self.idio_ig_shape,
            idio_ig_scale: self.idio_ig_scale,
            var_coef_prior_variance: self.var_coef_prior_variance,
            sigma_iw_dof: self.sigma_iw_dof,
            sigma_iw_scale: self.sigma_iw_scale,
            enforce_stationarity: self.enforce_stationarity,
            stationarity_max_redraws: self.stationarity_max_redraws,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            factors: self.factors,
            observables: 1,
            lags: self.lags,
            n_draws: self.draws,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            priors: self.priors(),
            init_state_variance: self.init_state_variance,
        }
    }

    pub fn irf_settings(&self) -> IrfSettings {
        IrfSettings {
            horizon: self.horizon,
            shock_size: self.shock_size,
            lower_quantile: self.lower_quantile,
            upper_quantile: self.upper_quantile,
            units: self.units,
        }
    }

    pub fn dgp_spec(&self) -> DgpSpec {
        DgpSpec {
            n: self.sim_series,
            t: self.sim_periods,
            k: self.sim_factors,
            m: 1,
            d: self.sim_lags,
            idio_noise_scale: self.sim_noise,
            fraction_slow: self.sim_fraction_slow,
            seed: self.seed,
            ..DgpSpec::default()
        }
    }

    /// Checks that do not need any input file.
    pub fn validate(&self) -> Result<()> {
        self.model_spec().validate()?;
        self.irf_settings().validate()?;
        let bad = |m: String| Err(FavarError::InvalidSpec(m));
        if self.chains < 1 {
            return bad("chains must be at least 1".into());
        }
        if self.plot_columns < 1 {
            return bad("plot_columns must be at least 1".into());
        }
        if self.policy.trim().is_empty() {
            return bad("policy variable name is empty".into());
        }
        if self.sweep_factors.is_empty() || self.sweep_lags.is_empty() {
            return bad("sweep grids must not be empty".into());
        }
        if self.sweep_factors.contains(&0) || self.sweep_lags.contains(&0) {
            return bad("sweep grid values must be positive".into());
        }
        Ok(())
    }

    pub fn data_paths(&self) -> Result<(&Path, &Path)> {
        match (&self.data, &self.metadata) {
            (Some(d), Some(m)) => Ok((d, m)),
            _ => Err(FavarError::InvalidSpec("config must set both 'data' and 'metadata'".into())),
        }
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.output.join("prepared")
    }

    pub fn chains_dir(&self) -> PathBuf {
        self.output.join("chains")
    }
}

/// Parses a grid such as `K=1..5` or `d=2,4`.
pub fn parse_grid(arg: &str) -> Result<(String, Vec<usize>)> {
    let bad = || FavarError::InvalidSpec(format!("cannot parse sweep grid '{arg}' (e.g. K=1..5 or d=2,4)"));
    let (key, vals) = arg.split_once('=').ok_or_else(bad)?;
    let key = key.trim().to_string();
    let mut out = Vec::new();
    for part in vals.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.parse().map_err(|_| bad())?;
            let b: usize = b.trim_start_matches('=').parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    Ok((key, out))
}
