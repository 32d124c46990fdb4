//! Synthetic FAVAR data with known ground truth, and recovery metrics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{FavarError, Result};
use crate::impulse::IrfBands;
use crate::linalg::{checked_cholesky, spectral_radius};
use crate::model::FavarParams;
use crate::panel::{
    prepare, Interpolation, NativeFrequency, Panel, PrepareOptions, Quarter, RawSeries, Speed,
    Tcode, VariableMeta,
};

/// Maximum companion spectral radius of generated VARs.
pub const MAX_DGP_RADIUS: f64 = 0.95;
const MAX_STABILITY_DRAWS: usize = 1000;
const SIM_BURN: usize = 200;
/// Level added to the simulated policy rate in the raw files.
const POLICY_LEVEL: f64 = 3.0;

pub const POLICY_NAME: &str = "POLICY";

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub m: usize,
    pub d: usize,
    pub idio_noise_scale: f64,
    pub fraction_slow: f64,
    pub seed: u64,
    /// Raw-scale parameters to simulate from instead of random ones.
    pub params: Option<FavarParams>,
    pub start: Quarter,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            n: 60,
            t: 200,
            k: 3,
            m: 1,
            d: 2,
            idio_noise_scale: 0.5,
            fraction_slow: 0.5,
            seed: 1,
            params: None,
            start: Quarter::new(1985, 1).expect("valid quarter"),
        }
    }
}

impl DgpSpec {
    pub fn n_slow(&self) -> usize {
        ((self.fraction_slow * self.n as f64).ceil() as usize).clamp(self.k, self.n)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FavarError::InvalidSpec(m));
        if self.m != 1 {
            return bad("only one observable policy variable is supported".into());
        }
        if self.k < 1 || self.d < 1 {
            return bad("K and d must be at least 1".into());
        }
        if self.k + self.m > self.n {
            return bad(format!("K + M = {} exceeds N = {}", self.k + self.m, self.n));
        }
        if self.t < crate::panel::MIN_PERIODS {
            return bad(format!("T must be at least {}", crate::panel::MIN_PERIODS));
        }
        if !(self.fraction_slow > 0.0 && self.fraction_slow <= 1.0) {
            return bad("fraction_slow must be in (0, 1]".into());
        }
        if !(self.idio_noise_scale >= 0.0) {
            return bad("idio_noise_scale must be non-negative".into());
        }
        Ok(())
    }
}

/// Everything produced by [`generate_favar_dgp`].
#[derive(Debug, Clone)]
pub struct DgpOutput {
    /// Raw series (informational series first, policy last) as written by
    /// the `simulate` command.
    pub raw: Vec<RawSeries>,
    pub meta: Vec<VariableMeta>,
    /// The prepared panel obtained from `raw` through [`prepare`].
    pub panel: Panel,
    /// True parameters expressed in the prepared panel's coordinates.
    pub params: FavarParams,
    /// True factor path in the same coordinates (`T × K`).
    pub factors: DMatrix<f64>,
    /// True parameters in raw simulation units.
    pub raw_params: FavarParams,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn random_params(spec: &DgpSpec, n_slow: usize, rng: &mut ChaCha8Rng) -> Result<FavarParams> {
    let (n, k, m, d) = (spec.n, spec.k, spec.m, spec.d);
    let r = k + m;
    let mut var_coeffs = None;
    for _ in 0..MAX_STABILITY_DRAWS {
        let g: Vec<DMatrix<f64>> = (0..d)
            .map(|l| {
                DMatrix::from_fn(r, r, |i, j| {
                    let noise = if l == 0 { 0.15 } else { 0.1 } * normal(rng);
                    if l == 0 && i == j {
                        0.3 + 0.4 * rng.random::<f64>() + noise
                    } else {
                        noise
                    }
                })
            })
            .collect();
        if spectral_radius(&crate::impulse::companion_matrix(&g)) <= MAX_DGP_RADIUS {
            var_coeffs = Some(g);
            break;
        }
    }
    let var_coeffs = var_coeffs.ok_or_else(|| {
        FavarError::Numerical(format!(
            "no VAR with spectral radius <= {MAX_DGP_RADIUS} in {MAX_STABILITY_DRAWS} draws"
        ))
    })?;
    let chol = DMatrix::from_fn(r, r, |i, j| {
        if i == j {
            0.5 + 0.5 * rng.random::<f64>()
        } else if j < i {
            0.3 * normal(rng)
        } else {
            0.0
        }
    });
    let sigma = crate::linalg::symmetrized(&chol * chol.transpose());
    let mut lambda_f = DMatrix::from_fn(n, k, |_, _| normal(rng));
    lambda_f.view_mut((0, 0), (k, k)).fill_with_identity();
    let lambda_y = DMatrix::from_fn(n, m, |i, _| if i < n_slow { 0.0 } else { normal(rng) });
    let idio_var = DVector::from_fn(n, |_, _| {
        let s = spec.idio_noise_scale * (0.5 + rng.random::<f64>());
        s * s
    });
    Ok(FavarParams { lambda_f, lambda_y, idio_var, var_coeffs, sigma })
}

/// Simulates the FAVAR exactly as written: a VAR(d) in `(F, Y)` and the
/// observation equation for `X`, then runs the result through [`prepare`].
pub fn generate_favar_dgp(spec: &DgpSpec) -> Result<DgpOutput> {
    spec.validate()?;
    let (n, t, k, m, d) = (spec.n, spec.t, spec.k, spec.m, spec.d);
    let r = k + m;
    let n_slow = spec.n_slow();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raw_params = match &spec.params {
        Some(p) => {
            if p.n_series() != n || p.factors() != k || p.observables() != m || p.lags() != d {
                return Err(FavarError::Dimension("explicit DGP parameters do not match the spec".into()));
            }
            p.clone()
        }
        None => random_params(spec, n_slow, &mut rng)?,
    };
    let sigma_l = checked_cholesky(&raw_params.sigma, "DGP sigma")?.l();

    // Transition: burn in from zero, keep the last T periods.
    let total = SIM_BURN + t;
    let mut z = DMatrix::<f64>::zeros(total, r);
    for s in 0..total {
        let eps = DVector::from_fn(r, |_, _| normal(&mut rng));
        let mut zt = &sigma_l * eps;
        for (l, g) in raw_params.var_coeffs.iter().enumerate() {
            if s > l {
                zt += g * z.row(s - l - 1).transpose();
            }
        }
        z.row_mut(s).copy_from(&zt.transpose());
    }
    let z = z.rows(SIM_BURN, t).into_owned();
    let f_raw = z.columns(0, k).into_owned();
    let y_raw = z.columns(k, m).into_owned();
    let noise = DMatrix::from_fn(t, n, |_, i| raw_params.idio_var[i].sqrt() * normal(&mut rng));
    let x_raw = &f_raw * raw_params.lambda_f.transpose() + &y_raw * raw_params.lambda_y.transpose() + noise;

    let dates: Vec<Quarter> = (0..t).map(|i| spec.start.offset(i as i64)).collect();
    let width = format!("{n}").len().max(3);
    let mut raw = Vec::with_capacity(n + 1);
    let mut meta = Vec::with_capacity(n + 1);
    let tc1 = Tcode::new(1)?;
    for i in 0..n {
        let name = format!("X{:0width$}", i + 1);
        raw.push(RawSeries {
            name: name.clone(),
            dates: dates.clone(),
            values: x_raw.column(i).iter().map(|v| Some(*v)).collect(),
        });
        meta.push(VariableMeta {
            name,
            tcode: tc1,
            speed: if i < n_slow { Speed::Slow } else { Speed::Fast },
            interpolation: Interpolation::None,
            seasonal: false,
            native_frequency: NativeFrequency::Quarterly,
        });
    }
    raw.push(RawSeries {
        name: POLICY_NAME.into(),
        dates: dates.clone(),
        values: y_raw.column(0).iter().map(|v| Some(v + POLICY_LEVEL)).collect(),
    });
    meta.push(VariableMeta {
        name: POLICY_NAME.into(),
        tcode: tc1,
        speed: Speed::Fast,
        interpolation: Interpolation::None,
        seasonal: false,
        native_frequency: NativeFrequency::Quarterly,
    });

    let (panel, _) = prepare(
        &raw,
        &meta,
        &PrepareOptions { policy_name: POLICY_NAME.into(), adf_max_lag: None },
    )?;

    // Re-express the truth in standardized coordinates: X̃ᵢ = Xᵢ / sdᵢ and
    // F̃ⱼ = Fⱼ / sdⱼ for the K identifying series.
    let sd: Vec<f64> = panel.standardization[..n].iter().map(|s| s.stddev).collect();
    let mut scale_z = DVector::<f64>::from_element(r, 1.0);
    for j in 0..k {
        scale_z[j] = 1.0 / sd[j];
    }
    let dm = DMatrix::from_diagonal(&scale_z);
    let dm_inv = DMatrix::from_diagonal(&scale_z.map(|v| 1.0 / v));
    let lambda_f = DMatrix::from_fn(n, k, |i, j| raw_params.lambda_f[(i, j)] * sd[j] / sd[i]);
    let lambda_y = DMatrix::from_fn(n, m, |i, j| raw_params.lambda_y[(i, j)] / sd[i]);
    let idio_var = DVector::from_fn(n, |i, _| raw_params.idio_var[i] / (sd[i] * sd[i]));
    let var_coeffs = raw_params.var_coeffs.iter().map(|g| &dm * g * &dm_inv).collect();
    let sigma = crate::linalg::symmetrized(&dm * &raw_params.sigma * &dm);
    let mut lambda_f = lambda_f;
    lambda_f.view_mut((0, 0), (k, k)).fill_with_identity();
    let params = FavarParams { lambda_f, lambda_y, idio_var, var_coeffs, sigma };
    let mut factors = f_raw;
    for j in 0..k {
        let mean = factors.column(j).mean();
        factors.column_mut(j).apply(|v| *v = (*v - mean) / sd[j]);
    }
    Ok(DgpOutput { raw, meta, panel, params, factors, raw_params })
}

/// Trace R² of the regression of `true_f` on `est_f`: `tr(Fᵀ P F) / tr(Fᵀ F)`
/// with `P` the projector onto the column span of `est_f`.
pub fn trace_r2(true_f: &DMatrix<f64>, est_f: &DMatrix<f64>) -> Result<f64> {
    if true_f.nrows() != est_f.nrows() {
        return Err(FavarError::Dimension(format!(
            "factor paths have {} and {} rows",
            true_f.nrows(),
            est_f.nrows()
        )));
    }
    let ch = checked_cholesky(&est_f.tr_mul(est_f), "estimated factors")
        .map_err(|_| FavarError::Numerical("estimated factors are rank deficient".into()))?;
    let coef = ch.solve(&est_f.tr_mul(true_f));
    let fitted = est_f * coef;
    let total = true_f.norm_squared();
    Ok((fitted.component_mul(true_f).sum() / total).clamp(0.0, 1.0))
}

/// Fraction of (horizon, variable) cells where the truth lies inside the
/// band, and the RMSE of the band median against the truth.
pub fn irf_coverage(true_irf: &DMatrix<f64>, bands: &IrfBands) -> Result<(f64, f64)> {
    if true_irf.shape() != bands.median.shape() {
        return Err(FavarError::Dimension(format!(
            "true IRF is {:?} but bands are {:?}",
            true_irf.shape(),
            bands.median.shape()
        )));
    }
    let cells = true_irf.len() as f64;
    let mut inside = 0usize;
    let mut sq = 0.0;
    for ((v, (lo, hi)), med) in true_irf
        .iter()
        .zip(bands.lower.iter().zip(bands.upper.iter()))
        .zip(bands.median.iter())
    {
        if *lo <= *v && *v <= *hi {
            inside += 1;
        }
        sq += (med - v).powi(2);
    }
    Ok((inside as f64 / cells, (sq / cells).sqrt()))
}
