use favar::linalg::{standard_normal_matrix, standard_normal_vector};
use favar::model::{FavarParams, ModelSpec};
use favar::state_space::{build_state_space, carter_kohn_draw, kalman_filter, kalman_smoother, StateSpaceForm};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_ssf(s: usize, n: usize, exact: &[usize], rng: &mut ChaCha8Rng) -> StateSpaceForm {
    let mut trans = standard_normal_matrix(s, s, rng);
    let scale = 0.8 / favar::linalg::spectral_radius(&trans);
    trans *= scale;
    let q = standard_normal_matrix(s, s, rng);
    let trans_var = &q * q.transpose() * 0.3 + DMatrix::identity(s, s) * 0.1;
    let obs_map = standard_normal_matrix(n, s, rng);
    let obs_var = DVector::from_fn(n, |i, _| if exact.contains(&i) { 0.0 } else { 0.2 + 0.1 * i as f64 });
    StateSpaceForm { obs_map, obs_var, trans, trans_var }
}

/// Joint Gaussian of stacked states and observations, built directly from
/// the moment recursions rather than the filter.
struct Dense {
    state_mean: Vec<DVector<f64>>,
    /// `state_cov[t][u] = Cov(sₜ, sᵤ)`.
    state_cov: Vec<Vec<DMatrix<f64>>>,
    obs_mean: DVector<f64>,
    obs_cov: DMatrix<f64>,
}

fn dense(ssf: &StateSpaceForm, t_len: usize, m0: &DVector<f64>, p0: &DMatrix<f64>) -> Dense {
    let s = ssf.trans.nrows();
    let n = ssf.obs_map.nrows();
    let a = &ssf.trans;
    let mut means = Vec::new();
    let mut vars = Vec::new();
    let (mut m, mut v) = (m0.clone(), p0.clone());
    for _ in 0..t_len {
        m = a * m;
        v = a * v * a.transpose() + &ssf.trans_var;
        means.push(m.clone());
        vars.push(v.clone());
    }
    let mut cross = vec![vec![DMatrix::zeros(s, s); t_len]; t_len];
    for t in 0..t_len {
        let mut c = vars[t].clone();
        for u in t..t_len {
            cross[u][t] = c.clone();
            cross[t][u] = c.transpose();
            c = a * c;
        }
    }
    let h = &ssf.obs_map;
    let mut obs_mean = DVector::zeros(n * t_len);
    let mut obs_cov = DMatrix::zeros(n * t_len, n * t_len);
    for t in 0..t_len {
        obs_mean.rows_mut(t * n, n).copy_from(&(h * &means[t]));
        for u in 0..t_len {
            let mut blk = h * &cross[t][u] * h.transpose();
            if t == u {
                for i in 0..n {
                    blk[(i, i)] += ssf.obs_var[i];
                }
            }
            obs_cov.view_mut((t * n, u * n), (n, n)).copy_from(&blk);
        }
    }
    Dense { state_mean: means, state_cov: cross, obs_mean, obs_cov }
}

fn stack(data: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(data.len(), (0..data.nrows()).flat_map(|t| data.row(t).iter().copied().collect::<Vec<_>>()))
}

fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let ch = cov.clone().cholesky().expect("positive definite");
    let d = x - mean;
    let sol = ch.solve(&d);
    let log_det: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + d.dot(&sol))
}

fn simulate(ssf: &StateSpaceForm, t_len: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let s = ssf.trans.nrows();
    let n = ssf.obs_map.nrows();
    let q = ssf.trans_var.clone().cholesky().unwrap().l();
    let mut state = standard_normal_vector(s, rng);
    let mut data = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        state = &ssf.trans * state + &q * standard_normal_vector(s, rng);
        let y = &ssf.obs_map * &state + standard_normal_vector(n, rng).component_mul(&ssf.obs_var.map(f64::sqrt));
        data.row_mut(t).copy_from(&y.transpose());
    }
    data
}

#[test]
fn loglik_matches_dense_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for exact in [vec![], vec![2]] {
        let ssf = random_ssf(3, 4, &exact, &mut rng);
        let data = simulate(&ssf, 20, &mut rng);
        let m0 = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let p0 = DMatrix::identity(3, 3) * 2.0;
        let out = kalman_filter(&ssf, &data, &m0, &p0).unwrap();
        let d = dense(&ssf, 20, &m0, &p0);
        let want = gaussian_logpdf(&stack(&data), &d.obs_mean, &d.obs_cov);
        assert!((out.log_likelihood - want).abs() < 1e-8, "{} vs {want}", out.log_likelihood);
    }
}

#[test]
fn smoother_matches_dense_conditional_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let t_len = 15;
    for exact in [vec![], vec![0]] {
        let ssf = random_ssf(3, 4, &exact, &mut rng);
        let data = simulate(&ssf, t_len, &mut rng);
        let m0 = DVector::zeros(3);
        let p0 = DMatrix::identity(3, 3);
        let out = kalman_filter(&ssf, &data, &m0, &p0).unwrap();
        let (means, covs) = kalman_smoother(&out, &ssf).unwrap();
        let d = dense(&ssf, t_len, &m0, &p0);
        let n = 4;
        let h = &ssf.obs_map;
        let inv = d.obs_cov.clone().try_inverse().unwrap();
        let resid = stack(&data) - &d.obs_mean;
        for t in 0..t_len {
            // Cov(sₜ, Y) = [Cov(sₜ, sᵤ) Hᵀ]ᵤ
            let mut c = DMatrix::zeros(3, n * t_len);
            for u in 0..t_len {
                c.view_mut((0, u * n), (3, n)).copy_from(&(&d.state_cov[t][u] * h.transpose()));
            }
            let mean = &d.state_mean[t] + &c * &inv * &resid;
            let cov = &d.state_cov[t][t] - &c * &inv * c.transpose();
            assert!((&means[t] - mean).amax() < 1e-8, "mean at {t}");
            assert!((&covs[t] - cov).amax() < 1e-8, "cov at {t}");
        }
    }
}

#[test]
fn noiseless_square_system_inverts_observations() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ssf = random_ssf(3, 3, &[0, 1, 2], &mut rng);
    let data = simulate(&ssf, 10, &mut rng);
    let out = kalman_filter(&ssf, &data, &DVector::zeros(3), &DMatrix::identity(3, 3)).unwrap();
    let hinv = ssf.obs_map.clone().try_inverse().unwrap();
    for t in 0..10 {
        let want = &hinv * data.row(t).transpose();
        assert!((&out.filtered_means[t] - want).amax() < 1e-8);
        assert!(out.filtered_covs[t].amax() < 1e-8);
    }
}

#[test]
fn static_scalar_state_is_a_shrunk_running_mean() {
    let ssf = StateSpaceForm {
        obs_map: DMatrix::from_element(1, 1, 1.0),
        obs_var: DVector::from_element(1, 0.5),
        trans: DMatrix::from_element(1, 1, 1.0),
        trans_var: DMatrix::zeros(1, 1),
    };
    let ys = [1.0, 2.5, -0.5, 3.0, 0.25, 1.75];
    let data = DMatrix::from_column_slice(ys.len(), 1, &ys);
    let v0 = 4.0;
    let out = kalman_filter(&ssf, &data, &DVector::zeros(1), &DMatrix::from_element(1, 1, v0)).unwrap();
    let mut sum = 0.0;
    for (t, y) in ys.iter().enumerate() {
        sum += y;
        let prec = 1.0 / v0 + (t + 1) as f64 / 0.5;
        assert!((out.filtered_means[t][0] - sum / 0.5 / prec).abs() < 1e-12);
        assert!((out.filtered_covs[t][(0, 0)] - 1.0 / prec).abs() < 1e-12);
    }
}

#[test]
fn carter_kohn_draws_match_smoothed_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let ssf = random_ssf(3, 4, &[], &mut rng);
    let t_len = 12;
    let data = simulate(&ssf, t_len, &mut rng);
    let out = kalman_filter(&ssf, &data, &DVector::zeros(3), &DMatrix::identity(3, 3)).unwrap();
    let (means, covs) = kalman_smoother(&out, &ssf).unwrap();
    let draws = 5000;
    let mut sum = vec![DVector::<f64>::zeros(3); t_len];
    let mut sq = vec![DMatrix::<f64>::zeros(3, 3); t_len];
    let mut draw_rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..draws {
        let path = carter_kohn_draw(&out, &ssf, &mut draw_rng).unwrap();
        for t in 0..t_len {
            let x = path.row(t).transpose();
            sum[t] += &x;
            sq[t] += &x * x.transpose();
        }
    }
    let nd = draws as f64;
    for t in 0..t_len {
        let mean = &sum[t] / nd;
        let cov = &sq[t] / nd - &mean * mean.transpose();
        for i in 0..3 {
            let se = (covs[t][(i, i)] / nd).sqrt();
            assert!((mean[i] - means[t][i]).abs() < 4.5 * se, "mean t={t} i={i}");
            for j in 0..3 {
                let sd = (covs[t][(i, i)] * covs[t][(j, j)]).sqrt();
                // Sampling sd of a covariance estimate is at most about sd·√(2/n).
                assert!((cov[(i, j)] - covs[t][(i, j)]).abs() < 5.0 * sd * (2.0 / nd).sqrt(), "cov t={t}");
            }
        }
    }
}

#[test]
fn carter_kohn_is_deterministic_given_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let ssf = random_ssf(3, 4, &[1], &mut rng);
    let data = simulate(&ssf, 30, &mut rng);
    let out = kalman_filter(&ssf, &data, &DVector::zeros(3), &DMatrix::identity(3, 3)).unwrap();
    let a = carter_kohn_draw(&out, &ssf, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = carter_kohn_draw(&out, &ssf, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let c = carter_kohn_draw(&out, &ssf, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn favar_params(rng: &mut ChaCha8Rng, n: usize, k: usize, d: usize) -> (FavarParams, ModelSpec) {
    let r = k + 1;
    let var_coeffs = (0..d).map(|l| standard_normal_matrix(r, r, rng) * (0.25 / (l + 1) as f64)).collect();
    let q = standard_normal_matrix(r, r, rng);
    let mut lambda_f = standard_normal_matrix(n, k, rng);
    lambda_f.view_mut((0, 0), (k, k)).fill_with_identity();
    let mut lambda_y = standard_normal_matrix(n, 1, rng);
    lambda_y.rows_mut(0, k).fill(0.0);
    let params = FavarParams {
        lambda_f,
        lambda_y,
        idio_var: DVector::from_fn(n, |i, _| 0.3 + 0.05 * i as f64),
        var_coeffs,
        sigma: &q * q.transpose() + DMatrix::identity(r, r) * 0.2,
    };
    let spec = ModelSpec { factors: k, observables: 1, lags: d, ..ModelSpec::default() };
    (params, spec)
}

#[test]
fn companion_form_reproduces_var_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (params, spec) = favar_params(&mut rng, 6, 2, 3);
    let ssf = build_state_space(&params, &spec).unwrap();
    let r = 3;
    let s = ssf.state_dim();
    let mut state = DVector::<f64>::zeros(s);
    let mut z: Vec<DVector<f64>> = Vec::new();
    for step in 0..200 {
        let eps = standard_normal_vector(r, &mut rng);
        let mut shock = DVector::zeros(s);
        shock.rows_mut(0, r).copy_from(&eps);
        state = &ssf.trans * state + shock;
        let mut direct = eps.clone();
        for (l, g) in params.var_coeffs.iter().enumerate() {
            if step > l {
                direct += g * &z[step - l - 1];
            }
        }
        z.push(direct.clone());
        for l in 0..3.min(step + 1) {
            assert!((state.rows(l * r, r) - &z[step - l]).amax() < 1e-10);
        }
    }
}

#[test]
fn informational_row_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let (params, spec) = favar_params(&mut rng, 7, 2, 2);
    let ssf = build_state_space(&params, &spec).unwrap();
    let data = simulate_exact(&ssf, 40, &mut rng);
    let s = ssf.state_dim();
    let m0 = DVector::zeros(s);
    let p0 = DMatrix::identity(s, s) * 10.0;
    let base = kalman_filter(&ssf, &data, &m0, &p0).unwrap();
    let perm = [4usize, 2, 6, 0, 5, 1, 3, 7];
    let permuted = StateSpaceForm {
        obs_map: ssf.obs_map.select_rows(&perm),
        obs_var: DVector::from_iterator(8, perm.iter().map(|&i| ssf.obs_var[i])),
        trans: ssf.trans.clone(),
        trans_var: ssf.trans_var.clone(),
    };
    let out = kalman_filter(&permuted, &data.select_columns(&perm), &m0, &p0).unwrap();
    assert!((out.log_likelihood - base.log_likelihood).abs() < 1e-9 * base.log_likelihood.abs());
    for t in 0..40 {
        assert!((&out.filtered_means[t] - &base.filtered_means[t]).amax() < 1e-9);
    }
}

/// Simulation for forms whose transition covariance is singular.
fn simulate_exact(ssf: &StateSpaceForm, t_len: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let s = ssf.state_dim();
    let n = ssf.obs_dim();
    let q = favar::linalg::psd_factor(&ssf.trans_var);
    let mut state = DVector::zeros(s);
    let mut data = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        state = &ssf.trans * state + &q * standard_normal_vector(s, rng);
        let y = &ssf.obs_map * &state + standard_normal_vector(n, rng).component_mul(&ssf.obs_var.map(f64::sqrt));
        data.row_mut(t).copy_from(&y.transpose());
    }
    data
}

#[test]
fn favar_form_loglik_matches_dense_with_exact_policy_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (params, spec) = favar_params(&mut rng, 5, 2, 2);
    let ssf = build_state_space(&params, &spec).unwrap();
    let t_len = 12;
    let data = simulate_exact(&ssf, t_len, &mut rng);
    let s = ssf.state_dim();
    let m0 = DVector::zeros(s);
    let p0 = DMatrix::identity(s, s) * 3.0;
    let out = kalman_filter(&ssf, &data, &m0, &p0).unwrap();
    let d = dense(&ssf, t_len, &m0, &p0);
    let want = gaussian_logpdf(&stack(&data), &d.obs_mean, &d.obs_cov);
    assert!((out.log_likelihood - want).abs() < 1e-8, "{} vs {want}", out.log_likelihood);
    // Observed policy coordinates are reproduced exactly.
    for t in 0..t_len {
        assert!((out.filtered_means[t][2] - data[(t, 5)]).abs() < 1e-9);
    }
}

#[test]
fn nonpositive_idiosyncratic_variance_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut params, spec) = favar_params(&mut rng, 5, 2, 1);
    params.idio_var[3] = 0.0;
    assert!(build_state_space(&params, &spec).is_err());
}

#[test]
fn local_level_draws_match_smoother_within_three_standard_errors() {
    let ssf = StateSpaceForm {
        obs_map: DMatrix::from_element(1, 1, 1.0),
        obs_var: DVector::from_element(1, 1.0),
        trans: DMatrix::from_element(1, 1, 1.0),
        trans_var: DMatrix::from_element(1, 1, 0.5),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let t_len = 20;
    let data = simulate(&ssf, t_len, &mut rng);
    let out = kalman_filter(&ssf, &data, &DVector::zeros(1), &DMatrix::from_element(1, 1, 10.0)).unwrap();
    let (means, covs) = kalman_smoother(&out, &ssf).unwrap();
    let draws = 5000;
    let mut paths = Vec::with_capacity(draws);
    let mut draw_rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..draws {
        paths.push(carter_kohn_draw(&out, &ssf, &mut draw_rng).unwrap());
    }
    for t in 0..t_len {
        let xs: Vec<f64> = paths.iter().map(|p| p[(t, 0)]).collect();
        let mean = xs.iter().sum::<f64>() / draws as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (covs[t][(0, 0)] / draws as f64).sqrt();
        assert!((mean - means[t][0]).abs() < 3.0 * se, "t={t}");
        assert!((var / covs[t][(0, 0)] - 1.0).abs() < 0.10, "t={t}");
    }
}

#[test]
fn smoothed_fixed_state_equals_gls_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let h = standard_normal_matrix(4, 2, &mut rng);
    let r = DVector::from_vec(vec![0.5, 1.0, 0.25, 2.0]);
    let ssf = StateSpaceForm {
        obs_map: h.clone(),
        obs_var: r.clone(),
        trans: DMatrix::identity(2, 2),
        trans_var: DMatrix::zeros(2, 2),
    };
    let state = DVector::from_vec(vec![1.5, -0.7]);
    let t_len = 25;
    let data = DMatrix::from_fn(t_len, 4, |t, i| (&h * &state)[i] + r[i].sqrt() * (((t * 7 + i * 3) % 11) as f64 - 5.0) / 5.0);
    let p0 = DMatrix::identity(2, 2) * 1e4;
    let out = kalman_filter(&ssf, &data, &DVector::zeros(2), &p0).unwrap();
    let (means, _) = kalman_smoother(&out, &ssf).unwrap();
    // GLS over all periods with R⁻¹ weights, plus the prior precision.
    let w = DMatrix::from_diagonal(&r.map(|v| 1.0 / v));
    let mut a = DMatrix::identity(2, 2) * 1e-4;
    let mut b = DVector::zeros(2);
    for t in 0..t_len {
        a += h.transpose() * &w * &h;
        b += h.transpose() * &w * data.row(t).transpose();
    }
    let gls = a.try_inverse().unwrap() * b;
    for m in &means {
        assert!((m - &gls).amax() < 1e-8);
        assert!((m - &means[0]).amax() < 1e-10);
    }
    assert_eq!(means[t_len - 1], out.filtered_means[t_len - 1]);
}

#[test]
fn noiseless_draw_equals_implied_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let ssf = random_ssf(3, 3, &[0, 1, 2], &mut rng);
    let data = simulate(&ssf, 15, &mut rng);
    let out = kalman_filter(&ssf, &data, &DVector::zeros(3), &DMatrix::identity(3, 3)).unwrap();
    let path = carter_kohn_draw(&out, &ssf, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let hinv = ssf.obs_map.clone().try_inverse().unwrap();
    for t in 0..15 {
        let want = &hinv * data.row(t).transpose();
        assert!((path.row(t).transpose() - &want).amax() < 1e-8, "{} {}", path.row(t), want);
    }
}

#[test]
fn state_dimension_and_companion_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let (params, spec) = favar_params(&mut rng, 4, 1, 1);
    let ssf = build_state_space(&params, &spec).unwrap();
    assert_eq!(ssf.state_dim(), 2);
    assert_eq!(ssf.trans, params.var_coeffs[0]);
    let (params, spec) = favar_params(&mut rng, 4, 1, 4);
    let ssf = build_state_space(&params, &spec).unwrap();
    assert_eq!(ssf.state_dim(), 8);
    assert_eq!(ssf.trans.view((2, 0), (6, 6)).into_owned(), DMatrix::<f64>::identity(6, 6));
    assert!(ssf.trans.view((2, 6), (6, 2)).iter().all(|v| *v == 0.0));
    // Observation rows: λ_f and λ_y on the current block, policy row exact.
    assert_eq!(ssf.obs_map.view((0, 0), (4, 1)).into_owned(), params.lambda_f);
    assert_eq!(ssf.obs_map.view((0, 1), (4, 1)).into_owned(), params.lambda_y);
    assert_eq!(ssf.obs_map[(4, 1)], 1.0);
    assert_eq!(ssf.obs_var[4], 0.0);
}
