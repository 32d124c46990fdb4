//! Model dimensions, priors and the parameter point shared by every
//! estimator and by the impulse-response code.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FavarError, Result};
use crate::linalg::spectral_radius;
use crate::panel::{Panel, Speed};

/// Conjugate prior hyperparameters.
///
/// Loading rows are `N(0, σᵢ² · loading_prior_variance · I)` given their
/// idiosyncratic variance `σᵢ² ~ IG(idio_ig_shape, idio_ig_scale)`. VAR
/// coefficients are matrix-normal `N(0, Σ ⊗ var_coef_prior_variance · I)`
/// given `Σ ~ IW(sigma_iw_dof, sigma_iw_scale · I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub loading_prior_variance: f64,
    pub idio_ig_shape: f64,
    pub idio_ig_scale: f64,
    pub var_coef_prior_variance: f64,
    /// `None` means `K + M + 2`.
    pub sigma_iw_dof: Option<usize>,
    pub sigma_iw_scale: f64,
    pub enforce_stationarity: bool,
    pub stationarity_max_redraws: usize,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            loading_prior_variance: 1.0,
            idio_ig_shape: 3.0,
            idio_ig_scale: 0.5,
            var_coef_prior_variance: 1.0,
            sigma_iw_dof: None,
            sigma_iw_scale: 1.0,
            enforce_stationarity: true,
            stationarity_max_redraws: 100,
        }
    }
}

impl PriorSpec {
    pub fn iw_dof(&self, dim: usize) -> usize {
        self.sigma_iw_dof.unwrap_or(dim + 2)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let pos = [
            ("loading_prior_variance", self.loading_prior_variance),
            ("idio_ig_shape", self.idio_ig_shape),
            ("idio_ig_scale", self.idio_ig_scale),
            ("var_coef_prior_variance", self.var_coef_prior_variance),
            ("sigma_iw_scale", self.sigma_iw_scale),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FavarError::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        if self.iw_dof(dim) < dim + 2 {
            return Err(FavarError::InvalidSpec(format!(
                "sigma_iw_dof must be at least K + M + 2 = {}",
                dim + 2
            )));
        }
        Ok(())
    }
}

/// Dimensions and sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Number of latent factors `K`.
    pub factors: usize,
    /// Number of observed policy variables `M` (only 1 is supported).
    pub observables: usize,
    /// VAR lag order `d`.
    pub lags: usize,
    pub n_draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub priors: PriorSpec,
    /// Diagonal of the pre-sample state covariance used by the filter.
    pub init_state_variance: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            factors: 3,
            observables: 1,
            lags: 4,
            n_draws: 10_000,
            burn_in: 2_000,
            thin: 5,
            seed: 0,
            priors: PriorSpec::default(),
            init_state_variance: 10.0,
        }
    }
}

impl ModelSpec {
    /// `K + M`.
    pub fn var_dim(&self) -> usize {
        self.factors + self.observables
    }

    /// Companion state size `(K + M) d`.
    pub fn state_dim(&self) -> usize {
        self.var_dim() * self.lags
    }

    /// Number of retained draws.
    pub fn kept_draws(&self) -> usize {
        if self.n_draws <= self.burn_in || self.thin == 0 {
            return 0;
        }
        (self.n_draws - self.burn_in).div_ceil(self.thin)
    }

    /// Checks the spec on its own, without a panel.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FavarError::InvalidSpec(m));
        if self.factors < 1 {
            return bad("the number of factors K must be at least 1".into());
        }
        if self.observables != 1 {
            return bad(format!("exactly one observable (M = 1) is supported, got {}", self.observables));
        }
        if self.lags < 1 {
            return bad("the lag order d must be at least 1".into());
        }
        if self.thin < 1 {
            return bad("thin must be at least 1".into());
        }
        if self.burn_in >= self.n_draws {
            return bad(format!(
                "burn_in ({}) must be smaller than n_draws ({})",
                self.burn_in, self.n_draws
            ));
        }
        if !(self.init_state_variance > 0.0) {
            return bad("init_state_variance must be positive".into());
        }
        self.priors.validate(self.var_dim())
    }

    /// Checks the spec against a prepared panel.
    pub fn validate_for(&self, panel: &Panel) -> Result<()> {
        self.validate()?;
        let n = panel.x_columns().len();
        if self.factors + self.observables > n {
            return Err(FavarError::InvalidSpec(format!(
                "K + M = {} exceeds the {n} informational series",
                self.factors + self.observables
            )));
        }
        for (k, m) in panel.x_meta().iter().take(self.factors).enumerate() {
            if m.speed != Speed::Slow {
                return Err(FavarError::InvalidSpec(format!(
                    "identification needs the first K = {} series to be slow; series {} ('{}') is fast",
                    self.factors,
                    k + 1,
                    m.name
                )));
            }
        }
        let t = panel.periods();
        let need = self.state_dim() + self.var_dim();
        if t <= need {
            return Err(FavarError::InvalidSpec(format!(
                "T = {t} periods is too short for (K+M)d + K + M = {need}"
            )));
        }
        Ok(())
    }
}

/// One parameter point of the FAVAR.
///
/// Observation: `Xₜ = λ_f Fₜ + λ_y Yₜ + eₜ`, `eₜ ~ N(0, diag(idio_var))`.
/// Transition: `zₜ = Σⱼ Γⱼ zₜ₋ⱼ + νₜ`, `zₜ = (Fₜ, Yₜ)`, `νₜ ~ N(0, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FavarParams {
    pub lambda_f: DMatrix<f64>,
    pub lambda_y: DMatrix<f64>,
    pub idio_var: DVector<f64>,
    pub var_coeffs: Vec<DMatrix<f64>>,
    pub sigma: DMatrix<f64>,
}

impl FavarParams {
    pub fn n_series(&self) -> usize {
        self.lambda_f.nrows()
    }

    pub fn factors(&self) -> usize {
        self.lambda_f.ncols()
    }

    pub fn observables(&self) -> usize {
        self.lambda_y.ncols()
    }

    pub fn lags(&self) -> usize {
        self.var_coeffs.len()
    }

    /// Companion matrix of the VAR block.
    pub fn companion(&self) -> DMatrix<f64> {
        crate::impulse::companion_matrix(&self.var_coeffs)
    }

    pub fn check_dims(&self, spec: &ModelSpec) -> Result<()> {
        let (k, m, d) = (spec.factors, spec.observables, spec.lags);
        let n = self.lambda_f.nrows();
        let ok = self.lambda_f.ncols() == k
            && self.lambda_y.shape() == (n, m)
            && self.idio_var.len() == n
            && self.var_coeffs.len() == d
            && self.var_coeffs.iter().all(|g| g.shape() == (k + m, k + m))
            && self.sigma.shape() == (k + m, k + m);
        if ok {
            Ok(())
        } else {
            Err(FavarError::Dimension(format!(
                "parameter shapes do not match K = {k}, M = {m}, d = {d}"
            )))
        }
    }

    /// Verifies the identification pins and positivity conditions.
    ///
    /// `slow[i]` says whether informational row `i` is a slow variable.
    pub fn check_invariants(&self, slow: &[bool], enforce_stationarity: bool) -> Result<()> {
        let k = self.factors();
        let fail = |m: String| Err(FavarError::Numerical(m));
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                if self.lambda_f[(i, j)] != want {
                    return fail(format!("lambda_f[{i},{j}] = {} breaks the identity block", self.lambda_f[(i, j)]));
                }
            }
        }
        for (i, is_slow) in slow.iter().enumerate() {
            if (i < k || *is_slow) && self.lambda_y.row(i).iter().any(|v| *v != 0.0) {
                return fail(format!("row {i} is slow but loads on the policy variable"));
            }
        }
        if self.idio_var.iter().any(|v| !(*v > 0.0)) {
            return fail("non-positive idiosyncratic variance".into());
        }
        if self.sigma.clone().cholesky().is_none() {
            return fail("sigma is not positive definite".into());
        }
        if (&self.sigma - self.sigma.transpose()).abs().max() > 0.0 {
            return fail("sigma is not symmetric".into());
        }
        if enforce_stationarity && spectral_radius(&self.companion()) >= 1.0 {
            return fail("VAR companion matrix is not stable".into());
        }
        Ok(())
    }
}
