//! One-step Bayesian estimation of the FAVAR by Gibbs sampling.
//!
//! Each sweep draws the whole factor path with [`carter_kohn_draw`] given the
//! parameters, then the loadings/idiosyncratic variances and the VAR block
//! from their conjugate conditionals given the factors. Identification is
//! exact: the first `K` (slow) series load on the factors through an
//! identity block, and no slow series loads on the policy variable.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FavarError, Result};
use crate::linalg::{
    checked_cholesky, inverse_gamma, inverse_wishart, spectral_radius, standard_normal_matrix,
    standard_normal_vector, symmetrized,
};
use crate::model::{FavarParams, ModelSpec, PriorSpec};
use crate::panel::{Panel, Speed};
use crate::pca::{initialize_from_pca, split_coeffs, stack_fy, var_design};
use crate::state_space::{build_state_space, carter_kohn_draw, kalman_filter};

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    pub params: Vec<FavarParams>,
    pub factor_paths: Vec<DMatrix<f64>>,
    /// Filter log-likelihood evaluated during each retained sweep.
    pub log_likelihoods: Vec<f64>,
    /// VAR draws rejected for instability, over the whole run.
    pub stationarity_rejections: usize,
    pub spec: ModelSpec,
    pub chain_index: u64,
    /// Names of the informational series, in model row order.
    pub series_names: Vec<String>,
    pub slow: Vec<bool>,
    pub policy_name: String,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Element-wise posterior mean of the parameters.
    pub fn posterior_mean(&self) -> Option<FavarParams> {
        let first = self.params.first()?;
        let n = self.params.len() as f64;
        let mut acc = first.clone();
        for p in &self.params[1..] {
            acc.lambda_f += &p.lambda_f;
            acc.lambda_y += &p.lambda_y;
            acc.idio_var += &p.idio_var;
            for (a, b) in acc.var_coeffs.iter_mut().zip(&p.var_coeffs) {
                *a += b;
            }
            acc.sigma += &p.sigma;
        }
        acc.lambda_f /= n;
        acc.lambda_y /= n;
        acc.idio_var /= n;
        for a in acc.var_coeffs.iter_mut() {
            *a /= n;
        }
        acc.sigma = symmetrized(acc.sigma / n);
        // Pins survive averaging only up to rounding; restore them exactly.
        let k = acc.factors();
        acc.lambda_f.view_mut((0, 0), (k, k)).fill_with_identity();
        for (i, s) in self.slow.iter().enumerate() {
            if i < k || *s {
                acc.lambda_y.row_mut(i).fill(0.0);
            }
        }
        Some(acc)
    }

    /// Element-wise posterior median of the factor paths.
    pub fn median_factor_path(&self) -> Option<DMatrix<f64>> {
        let first = self.factor_paths.first()?;
        let (t, k) = first.shape();
        let mut out = DMatrix::zeros(t, k);
        let mut buf = vec![0.0; self.factor_paths.len()];
        for i in 0..t {
            for j in 0..k {
                for (b, f) in buf.iter_mut().zip(&self.factor_paths) {
                    *b = f[(i, j)];
                }
                buf.sort_by(f64::total_cmp);
                out[(i, j)] = crate::impulse::quantile(&buf, 0.5);
            }
        }
        Some(out)
    }
}

fn draw_coefficients(
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    mean: &DVector<f64>,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    // Precision = L Lᵀ, so Lᵀ⁻¹ z has covariance precision⁻¹.
    let z = standard_normal_vector(mean.len(), rng);
    let lt = chol.l().transpose();
    let w = lt.solve_upper_triangular(&z).expect("Cholesky factor has a positive diagonal");
    mean + w * scale.sqrt()
}

/// Conjugate Normal–inverse-Gamma draw of every observation equation.
///
/// Rows `i < K`: `λ_f,i = eᵢ`, `λ_y,i = 0`, only the variance is drawn.
/// Other slow rows regress on `F`; fast rows on `(F, Y)`.
pub fn sample_loadings_block(
    x: &DMatrix<f64>,
    f: &DMatrix<f64>,
    y: &DMatrix<f64>,
    slow: &[bool],
    priors: &PriorSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let (t, n) = x.shape();
    let (k, m) = (f.ncols(), y.ncols());
    if f.nrows() != t || y.nrows() != t || slow.len() != n {
        return Err(FavarError::Dimension("loadings block inputs are not row-aligned".into()));
    }
    let fy = stack_fy(f, y);
    let prior_prec = 1.0 / priors.loading_prior_variance;
    let prec = |z: &DMatrix<f64>| {
        let mut p = z.tr_mul(z);
        for i in 0..p.nrows() {
            p[(i, i)] += prior_prec;
        }
        p
    };
    let prec_slow = checked_cholesky(&prec(f), "factor regressors")
        .map_err(|e| FavarError::Numerical(format!("rank-deficient regressors: {e}")))?;
    let prec_fast = checked_cholesky(&prec(&fy), "factor/policy regressors")
        .map_err(|e| FavarError::Numerical(format!("rank-deficient regressors: {e}")))?;
    let shape = priors.idio_ig_shape + t as f64 / 2.0;

    let mut lambda_f = DMatrix::<f64>::zeros(n, k);
    let mut lambda_y = DMatrix::<f64>::zeros(n, m);
    let mut idio = DVector::<f64>::zeros(n);
    for i in 0..n {
        let xi = x.column(i);
        if i < k {
            let ssr = (xi - f.column(i)).norm_squared();
            idio[i] = inverse_gamma(shape, priors.idio_ig_scale + 0.5 * ssr, rng)?;
            lambda_f[(i, i)] = 1.0;
            continue;
        }
        let (z, chol) = if slow[i] { (f, &prec_slow) } else { (&fy, &prec_fast) };
        let zx = z.tr_mul(&xi);
        let mean = chol.solve(&zx);
        let ssr = (xi.norm_squared() - mean.dot(&zx)).max(0.0);
        let s2 = inverse_gamma(shape, priors.idio_ig_scale + 0.5 * ssr, rng)?;
        let beta = draw_coefficients(chol, &mean, s2, rng);
        for j in 0..k {
            lambda_f[(i, j)] = beta[j];
        }
        if !slow[i] {
            for j in 0..m {
                lambda_y[(i, j)] = beta[k + j];
            }
        }
        idio[i] = s2;
    }
    Ok((lambda_f, lambda_y, idio))
}

/// Outcome of a VAR block draw.
#[derive(Debug, Clone)]
pub struct VarDraw {
    pub var_coeffs: Vec<DMatrix<f64>>,
    pub sigma: DMatrix<f64>,
    pub rejections: usize,
}

/// Conjugate Normal–inverse-Wishart draw of the VAR(d) on `(F, Y)`.
pub fn sample_var_block(
    f: &DMatrix<f64>,
    y: &DMatrix<f64>,
    d: usize,
    priors: &PriorSpec,
    rng: &mut ChaCha8Rng,
) -> Result<VarDraw> {
    let t = f.nrows();
    let r = f.ncols() + y.ncols();
    if y.nrows() != t {
        return Err(FavarError::Dimension("factor and policy paths differ in length".into()));
    }
    if d == 0 || t <= r * d + r {
        return Err(FavarError::Data(format!(
            "VAR block needs T > (K+M)d + K + M = {}, got T = {t}",
            r * d + r
        )));
    }
    let z = stack_fy(f, y);
    let (lhs, rhs) = var_design(&z, d);
    let mut prec = rhs.tr_mul(&rhs);
    for i in 0..prec.nrows() {
        prec[(i, i)] += 1.0 / priors.var_coef_prior_variance;
    }
    let chol = checked_cholesky(&prec, "VAR regressors")?;
    let b_mean = chol.solve(&rhs.tr_mul(&lhs));
    let scale = DMatrix::<f64>::identity(r, r) * priors.sigma_iw_scale + lhs.tr_mul(&lhs)
        - b_mean.tr_mul(&(&prec * &b_mean));
    let scale = symmetrized(scale);
    let dof = (priors.iw_dof(r) + lhs.nrows()) as f64;
    let lt = chol.l().transpose();
    let attempts = if priors.enforce_stationarity { priors.stationarity_max_redraws + 1 } else { 1 };
    let mut rejections = 0;
    for _ in 0..attempts {
        let sigma = inverse_wishart(dof, &scale, rng)?;
        let sigma_l = checked_cholesky(&sigma, "sigma draw")?.l();
        let e = standard_normal_matrix(r * d, r, rng);
        let w = lt.solve_upper_triangular(&e).expect("Cholesky factor has a positive diagonal");
        let b = &b_mean + w * sigma_l.transpose();
        let var_coeffs = split_coeffs(&b, r, d);
        if priors.enforce_stationarity
            && spectral_radius(&crate::impulse::companion_matrix(&var_coeffs)) >= 1.0
        {
            rejections += 1;
            continue;
        }
        return Ok(VarDraw { var_coeffs, sigma, rejections });
    }
    Err(FavarError::Numerical(format!(
        "no stationary VAR draw in {attempts} attempts"
    )))
}

/// Runs chain 0 of the sampler with the spec's seed.
pub fn run_gibbs(panel: &Panel, spec: &ModelSpec) -> Result<PosteriorChain> {
    run_chain(panel, spec, 0)
}

/// Runs one chain. Chains share the spec's seed and use `chain_index` as the
/// generator stream, so they are independent and individually reproducible.
pub fn run_chain(panel: &Panel, spec: &ModelSpec, chain_index: u64) -> Result<PosteriorChain> {
    run_chain_with(panel, spec, chain_index, |_| {})
}

/// As [`run_chain`], calling `progress(iteration)` after each sweep.
pub fn run_chain_with(
    panel: &Panel,
    spec: &ModelSpec,
    chain_index: u64,
    mut progress: impl FnMut(usize),
) -> Result<PosteriorChain> {
    spec.validate_for(panel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(chain_index);

    let (k, m) = (spec.factors, spec.observables);
    let x = panel.x_matrix();
    let y = panel.y_matrix();
    let slow: Vec<bool> = panel.x_meta().iter().map(|mt| mt.speed == Speed::Slow).collect();
    let t = x.nrows();
    let n = x.ncols();
    let mut data = DMatrix::<f64>::zeros(t, n + m);
    data.columns_mut(0, n).copy_from(&x);
    data.columns_mut(n, m).copy_from(&y);
    let s = spec.state_dim();
    let init_mean = DVector::<f64>::zeros(s);
    let init_cov = DMatrix::<f64>::identity(s, s) * spec.init_state_variance;

    let (mut params, _) = initialize_from_pca(panel, spec)?;
    let mut chain = PosteriorChain {
        params: Vec::with_capacity(spec.kept_draws()),
        factor_paths: Vec::with_capacity(spec.kept_draws()),
        log_likelihoods: Vec::with_capacity(spec.kept_draws()),
        stationarity_rejections: 0,
        spec: spec.clone(),
        chain_index,
        series_names: panel.x_meta().iter().map(|mt| mt.name.clone()).collect(),
        slow: slow.clone(),
        policy_name: panel.policy_name.clone(),
    };

    for iter in 0..spec.n_draws {
        let mut sweep = || -> Result<(DMatrix<f64>, f64)> {
            let ssf = build_state_space(&params, spec)?;
            let filt = kalman_filter(&ssf, &data, &init_mean, &init_cov)?;
            let path = carter_kohn_draw(&filt, &ssf, &mut rng)?;
            let f = path.columns(0, k).into_owned();
            let (lf, ly, iv) = sample_loadings_block(&x, &f, &y, &slow, &spec.priors, &mut rng)?;
            let var = sample_var_block(&f, &y, spec.lags, &spec.priors, &mut rng)?;
            chain.stationarity_rejections += var.rejections;
            params = FavarParams {
                lambda_f: lf,
                lambda_y: ly,
                idio_var: iv,
                var_coeffs: var.var_coeffs,
                sigma: var.sigma,
            };
            Ok((f, filt.log_likelihood))
        };
        let (f, loglik) = sweep().map_err(|e| e.at_draw(iter))?;
        if iter >= spec.burn_in && (iter - spec.burn_in) % spec.thin == 0 {
            chain.params.push(params.clone());
            chain.factor_paths.push(f);
            chain.log_likelihoods.push(loglik);
        }
        progress(iter);
    }
    Ok(chain)
}

/// Bayesian two-step estimator: factors fixed at the policy-purged principal
/// components, parameters drawn from the same conditional blocks.
pub fn run_two_step(panel: &Panel, spec: &ModelSpec, chain_index: u64) -> Result<PosteriorChain> {
    spec.validate_for(panel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(chain_index);
    let f = crate::pca::two_step_factors(panel, spec)?;
    let x = panel.x_matrix();
    let y = panel.y_matrix();
    let slow: Vec<bool> = panel.x_meta().iter().map(|mt| mt.speed == Speed::Slow).collect();
    let mut chain = PosteriorChain {
        params: Vec::with_capacity(spec.kept_draws()),
        factor_paths: Vec::with_capacity(spec.kept_draws()),
        log_likelihoods: Vec::with_capacity(spec.kept_draws()),
        stationarity_rejections: 0,
        spec: spec.clone(),
        chain_index,
        series_names: panel.x_meta().iter().map(|mt| mt.name.clone()).collect(),
        slow: slow.clone(),
        policy_name: panel.policy_name.clone(),
    };
    for iter in 0..spec.n_draws {
        let mut sweep = || -> Result<FavarParams> {
            let (lf, ly, iv) = sample_loadings_block(&x, &f, &y, &slow, &spec.priors, &mut rng)?;
            let var = sample_var_block(&f, &y, spec.lags, &spec.priors, &mut rng)?;
            chain.stationarity_rejections += var.rejections;
            Ok(FavarParams { lambda_f: lf, lambda_y: ly, idio_var: iv, var_coeffs: var.var_coeffs, sigma: var.sigma })
        };
        let p = sweep().map_err(|e| e.at_draw(iter))?;
        if iter >= spec.burn_in && (iter - spec.burn_in) % spec.thin == 0 {
            chain.params.push(p);
            chain.factor_paths.push(f.clone());
            chain.log_likelihoods.push(f64::NAN);
        }
    }
    Ok(chain)
}

/// Summary of one scalar parameter's trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub stddev: f64,
    pub geweke_z: f64,
    pub flagged: bool,
}

/// Minimum chain length accepted by [`chain_diagnostics`].
pub const MIN_DIAGNOSTIC_LENGTH: usize = 50;

/// Spectral density at frequency zero from an AR(p) fit, `p` chosen by AIC
/// up to `10 log10(n)` (Yule–Walker via Levinson–Durbin).
pub fn spectrum0_ar(x: &[f64]) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let max_p = ((10.0 * (n as f64).log10()).floor() as usize).min(n.saturating_sub(2));
    let acov: Vec<f64> = (0..=max_p)
        .map(|lag| {
            (lag..n).map(|t| (x[t] - mean) * (x[t - lag] - mean)).sum::<f64>() / n as f64
        })
        .collect();
    if !(acov[0] > 0.0) {
        return 0.0;
    }
    let mut phi: Vec<f64> = Vec::new();
    let mut var = acov[0];
    let mut best = (n as f64 * var.ln(), var, Vec::new());
    for p in 1..=max_p {
        let num = acov[p] - phi.iter().enumerate().map(|(j, a)| a * acov[p - 1 - j]).sum::<f64>();
        let kappa = num / var;
        let mut next = vec![0.0; p];
        for j in 0..p - 1 {
            next[j] = phi[j] - kappa * phi[p - 2 - j];
        }
        next[p - 1] = kappa;
        phi = next;
        var *= 1.0 - kappa * kappa;
        if !(var > 0.0) {
            break;
        }
        let aic = n as f64 * var.ln() + 2.0 * p as f64;
        if aic < best.0 {
            best = (aic, var, phi.clone());
        }
    }
    let denom = 1.0 - best.2.iter().sum::<f64>();
    best.1 / (denom * denom)
}

/// Geweke convergence z-score: mean of the first 10% against the mean of the
/// last 50%, each with an AR spectral variance.
pub fn geweke_z(x: &[f64]) -> f64 {
    let n = x.len();
    let na = (n as f64 * 0.1).floor() as usize;
    let nb = (n as f64 * 0.5).floor() as usize;
    let a = &x[..na];
    let b = &x[n - nb..];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = spectrum0_ar(a) / na as f64 + spectrum0_ar(b) / nb as f64;
    if !(var > 0.0) {
        let diff = mean(a) - mean(b);
        return if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
    }
    (mean(a) - mean(b)) / var.sqrt()
}

/// Mean, stddev and Geweke z-score for each named trace; `|z| > 2` is flagged.
pub fn summarize_traces(traces: &[(String, Vec<f64>)]) -> Result<Vec<ParamSummary>> {
    traces
        .iter()
        .map(|(name, x)| {
            if x.len() < MIN_DIAGNOSTIC_LENGTH {
                return Err(FavarError::Data(format!(
                    "chain of length {} is too short for diagnostics (need {MIN_DIAGNOSTIC_LENGTH})",
                    x.len()
                )));
            }
            let (mean, stddev) = crate::linalg::mean_std(x);
            let z = geweke_z(x);
            Ok(ParamSummary { name: name.clone(), mean, stddev, geweke_z: z, flagged: !(z.abs() <= 2.0) })
        })
        .collect()
}

/// Scalar traces of every free parameter in the chain.
pub fn chain_traces(chain: &PosteriorChain) -> Vec<(String, Vec<f64>)> {
    let Some(first) = chain.params.first() else { return Vec::new() };
    let (n, k, m) = (first.n_series(), first.factors(), first.observables());
    let r = k + m;
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    let mut push = |name: String, get: &dyn Fn(&FavarParams) -> f64| {
        out.push((name, chain.params.iter().map(get).collect()));
    };
    for i in k..n {
        let sname = &chain.series_names[i];
        for j in 0..k {
            push(format!("lambda_f[{sname},{j}]"), &|p| p.lambda_f[(i, j)]);
        }
        if !chain.slow[i] {
            for j in 0..m {
                push(format!("lambda_y[{sname},{j}]"), &|p| p.lambda_y[(i, j)]);
            }
        }
    }
    for i in 0..n {
        push(format!("idio_var[{}]", chain.series_names[i]), &|p| p.idio_var[i]);
    }
    for l in 0..first.lags() {
        for i in 0..r {
            for j in 0..r {
                push(format!("gamma{}[{i},{j}]", l + 1), &|p| p.var_coeffs[l][(i, j)]);
            }
        }
    }
    for i in 0..r {
        for j in i..r {
            push(format!("sigma[{i},{j}]"), &|p| p.sigma[(i, j)]);
        }
    }
    out
}

pub fn chain_diagnostics(chain: &PosteriorChain) -> Result<Vec<ParamSummary>> {
    if chain.len() < MIN_DIAGNOSTIC_LENGTH {
        return Err(FavarError::Data(format!(
            "chain of length {} is too short for diagnostics (need {MIN_DIAGNOSTIC_LENGTH})",
            chain.len()
        )));
    }
    summarize_traces(&chain_traces(chain))
}
