//! State-space form of the FAVAR, Kalman filter and smoother, and the
//! multi-move (forward-filter, backward-sample) path draw.
//!
//! The state is the companion vector `sₜ = (zₜ, zₜ₋₁, …, zₜ₋d₊₁)` with
//! `zₜ = (Fₜ, Yₜ)`. Observations are `[Xₜ; Yₜ]`; the `Yₜ` rows carry zero
//! measurement variance, so the policy variable enters the filter as an
//! exact observation and only the factor coordinates remain uncertain.
//!
//! The filter is initialised from a pre-sample state `s₀ ~ N(init_mean,
//! init_cov)` and predicts forward to `s₁` before the first update.
//! Observation rows with zero variance are processed with an ordinary gain;
//! the remaining rows (diagonal `R`) use the Woodbury form restricted to the
//! state coordinates the observation map actually touches, so the cost per
//! period is linear in the number of series.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{FavarError, Result};
use crate::linalg::{psd_factor_checked, standard_normal_vector, sym_inverse, symmetrize};
use crate::model::{FavarParams, ModelSpec};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceForm {
    /// `N_obs × S` loadings on the stacked state.
    pub obs_map: DMatrix<f64>,
    /// Diagonal of the measurement covariance `R`; zeros mark exact rows.
    pub obs_var: DVector<f64>,
    /// `S × S` transition (companion) matrix.
    pub trans: DMatrix<f64>,
    /// `S × S` transition covariance; only the top `(K+M)` block is non-zero.
    pub trans_var: DMatrix<f64>,
}

impl StateSpaceForm {
    pub fn state_dim(&self) -> usize {
        self.trans.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_map.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.state_dim();
        let n = self.obs_dim();
        if self.trans.shape() != (s, s)
            || self.trans_var.shape() != (s, s)
            || self.obs_map.ncols() != s
            || self.obs_var.len() != n
        {
            return Err(FavarError::Dimension("inconsistent state-space shapes".into()));
        }
        if self.obs_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(FavarError::Data("measurement variances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Builds the state-space form of `params`: `N` informational rows followed
/// by `M` exact rows for the observed policy variables.
pub fn build_state_space(params: &FavarParams, spec: &ModelSpec) -> Result<StateSpaceForm> {
    params.check_dims(spec)?;
    if let Some(i) = params.idio_var.iter().position(|v| !(*v > 0.0)) {
        return Err(FavarError::Data(format!(
            "idiosyncratic variance of series {i} is {} (must be positive)",
            params.idio_var[i]
        )));
    }
    let (k, m) = (spec.factors, spec.observables);
    let n = params.n_series();
    let r = k + m;
    let s = spec.state_dim();
    let mut obs_map = DMatrix::<f64>::zeros(n + m, s);
    obs_map.view_mut((0, 0), (n, k)).copy_from(&params.lambda_f);
    obs_map.view_mut((0, k), (n, m)).copy_from(&params.lambda_y);
    for j in 0..m {
        obs_map[(n + j, k + j)] = 1.0;
    }
    let mut obs_var = DVector::<f64>::zeros(n + m);
    obs_var.rows_mut(0, n).copy_from(&params.idio_var);
    let mut trans_var = DMatrix::<f64>::zeros(s, s);
    trans_var.view_mut((0, 0), (r, r)).copy_from(&params.sigma);
    Ok(StateSpaceForm {
        obs_map,
        obs_var,
        trans: params.companion(),
        trans_var,
    })
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    pub predicted_means: Vec<DVector<f64>>,
    pub predicted_covs: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

/// Precomputed pieces of the Woodbury update.
struct NoisyBlock {
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// `L` restricted to noisy rows and touched columns.
    load: DMatrix<f64>,
    inv_var: DVector<f64>,
    /// `Lᵀ R⁻¹ L`.
    cross: DMatrix<f64>,
    log_det_r: f64,
}

pub fn kalman_filter(
    ssf: &StateSpaceForm,
    data: &DMatrix<f64>,
    init_mean: &DVector<f64>,
    init_cov: &DMatrix<f64>,
) -> Result<FilterOutput> {
    ssf.validate()?;
    let s = ssf.state_dim();
    let n_obs = ssf.obs_dim();
    if data.ncols() != n_obs || init_mean.len() != s || init_cov.shape() != (s, s) {
        return Err(FavarError::Dimension(format!(
            "filter inputs: data has {} columns for {n_obs} observations, state dim {s}",
            data.ncols()
        )));
    }
    let t_len = data.nrows();

    let exact_rows: Vec<usize> = (0..n_obs).filter(|&i| ssf.obs_var[i] == 0.0).collect();
    let exact_map = ssf.obs_map.select_rows(&exact_rows);
    let noisy_rows: Vec<usize> = (0..n_obs).filter(|&i| ssf.obs_var[i] > 0.0).collect();
    let noisy = if noisy_rows.is_empty() {
        None
    } else {
        let cols: Vec<usize> = (0..s)
            .filter(|&j| noisy_rows.iter().any(|&i| ssf.obs_map[(i, j)] != 0.0))
            .collect();
        let load = ssf.obs_map.select_rows(&noisy_rows).select_columns(&cols);
        let inv_var = DVector::from_iterator(noisy_rows.len(), noisy_rows.iter().map(|&i| 1.0 / ssf.obs_var[i]));
        let weighted = DMatrix::from_fn(load.nrows(), load.ncols(), |i, j| load[(i, j)] * inv_var[i]);
        let cross = load.tr_mul(&weighted);
        let log_det_r = noisy_rows.iter().map(|&i| ssf.obs_var[i].ln()).sum();
        Some(NoisyBlock { rows: noisy_rows, cols, load, inv_var, cross, log_det_r })
    };

    let mut out = FilterOutput {
        filtered_means: Vec::with_capacity(t_len),
        filtered_covs: Vec::with_capacity(t_len),
        predicted_means: Vec::with_capacity(t_len),
        predicted_covs: Vec::with_capacity(t_len),
        log_likelihood: 0.0,
    };
    let mut mean = init_mean.clone();
    let mut cov = init_cov.clone();
    for t in 0..t_len {
        let mut m = &ssf.trans * &mean;
        let mut p = &ssf.trans * &cov * ssf.trans.transpose() + &ssf.trans_var;
        symmetrize(&mut p);
        out.predicted_means.push(m.clone());
        out.predicted_covs.push(p.clone());

        if !exact_rows.is_empty() {
            let hp = &exact_map * &p;
            let f = &hp * exact_map.transpose();
            let ch = crate::linalg::checked_cholesky(&f, "innovation covariance").map_err(|_| {
                FavarError::Numerical(format!("innovation covariance numerically singular at t = {t}"))
            })?;
            let y = DVector::from_iterator(exact_rows.len(), exact_rows.iter().map(|&i| data[(t, i)]));
            let v = y - &exact_map * &m;
            let fv = ch.solve(&v);
            let log_det: f64 = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            out.log_likelihood -= 0.5 * (exact_rows.len() as f64 * LN_2PI + log_det + v.dot(&fv));
            m += hp.tr_mul(&fv);
            p -= hp.tr_mul(&ch.solve(&hp));
            symmetrize(&mut p);
        }

        if let Some(nb) = &noisy {
            let m_j = DVector::from_iterator(nb.cols.len(), nb.cols.iter().map(|&j| m[j]));
            let mut v = -(&nb.load * &m_j);
            for (r, &i) in nb.rows.iter().enumerate() {
                v[r] += data[(t, i)];
            }
            let rv = v.component_mul(&nb.inv_var);
            let u = nb.load.tr_mul(&rv);
            let p_cols = p.select_columns(&nb.cols);
            let p_jj = p_cols.select_rows(&nb.cols);
            let g = DMatrix::<f64>::identity(nb.cols.len(), nb.cols.len()) + &nb.cross * &p_jj;
            let lu = g.clone().lu();
            let det = lu.determinant();
            if !(det > 0.0) {
                return Err(FavarError::Numerical(format!(
                    "innovation covariance numerically singular at t = {t}"
                )));
            }
            let g_inv_u = lu
                .solve(&u)
                .ok_or_else(|| FavarError::Numerical(format!("singular update at t = {t}")))?;
            let quad = v.dot(&rv) - u.dot(&(&p_jj * &g_inv_u));
            out.log_likelihood -=
                0.5 * (nb.rows.len() as f64 * LN_2PI + nb.log_det_r + det.ln() + quad);
            m += &p_cols * &g_inv_u;
            let g_inv_c = lu
                .solve(&(&nb.cross * p_cols.transpose()))
                .ok_or_else(|| FavarError::Numerical(format!("singular update at t = {t}")))?;
            p -= &p_cols * g_inv_c;
            symmetrize(&mut p);
        }

        out.filtered_means.push(m.clone());
        out.filtered_covs.push(p.clone());
        mean = m;
        cov = p;
    }
    Ok(out)
}

/// Rauch–Tung–Striebel smoother. Predicted covariances are inverted with the
/// pseudo-inverse fallback of [`sym_inverse`].
pub fn kalman_smoother(
    filter: &FilterOutput,
    ssf: &StateSpaceForm,
) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let t_len = filter.filtered_means.len();
    if t_len == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut means = filter.filtered_means.clone();
    let mut covs = filter.filtered_covs.clone();
    for t in (0..t_len - 1).rev() {
        let pa = &filter.filtered_covs[t] * ssf.trans.transpose();
        let gain = &pa * sym_inverse(&filter.predicted_covs[t + 1]);
        let dm = &means[t + 1] - &filter.predicted_means[t + 1];
        means[t] = &filter.filtered_means[t] + &gain * dm;
        let dp = &covs[t + 1] - &filter.predicted_covs[t + 1];
        let mut c = &filter.filtered_covs[t] + &gain * dp * gain.transpose();
        symmetrize(&mut c);
        covs[t] = c;
    }
    Ok((means, covs))
}

/// Draws a state path from its joint posterior given the data (Carter–Kohn).
///
/// Returns a `T × S` matrix whose row `t` is the sampled `sₜ`. Each backward
/// step conditions the filtered `sₜ` on the already drawn `sₜ₊₁`; with a
/// companion transition this pins the shared lag blocks exactly, so only the
/// oldest block and the factor coordinates carry fresh noise.
pub fn carter_kohn_draw<R: Rng + ?Sized>(
    filter: &FilterOutput,
    ssf: &StateSpaceForm,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let t_len = filter.filtered_means.len();
    let s = ssf.state_dim();
    let mut path = DMatrix::<f64>::zeros(t_len, s);
    if t_len == 0 {
        return Ok(path);
    }
    let sample = |mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R| -> Result<DVector<f64>> {
        let f = psd_factor_checked(cov, 1e-8).map_err(|e| {
            FavarError::Numerical(format!("conditional state covariance: {e}"))
        })?;
        Ok(mean + f * standard_normal_vector(s, rng))
    };
    let last = t_len - 1;
    let mut next = sample(&filter.filtered_means[last], &filter.filtered_covs[last], rng)?;
    path.row_mut(last).copy_from(&next.transpose());
    for t in (0..last).rev() {
        let p = &filter.filtered_covs[t];
        let pa = p * ssf.trans.transpose();
        let gain = &pa * sym_inverse(&filter.predicted_covs[t + 1]);
        let mean = &filter.filtered_means[t] + &gain * (&next - &filter.predicted_means[t + 1]);
        let mut cov = p - &gain * pa.transpose();
        symmetrize(&mut cov);
        next = sample(&mean, &cov, rng)?;
        path.row_mut(t).copy_from(&next.transpose());
    }
    Ok(path)
}
