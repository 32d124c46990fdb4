use favar::dgp::{generate_favar_dgp, DgpSpec};
use favar::linalg::standard_normal_vector;
use favar::panel::{
    adf_test, load_panel, prepare, quadratic_interpolate, read_prepared, write_metadata_csv, write_prepared,
    write_raw_csv, AggregationMode, Interpolation, NativeFrequency, PrepareOptions, Quarter, RawSeries, Speed,
    Tcode, VariableMeta,
};
use favar::pca::extract_principal_components;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Minimises ‖D x‖² over `{x : C x = c}` by parametrising the constraint set
/// as `x_p + N y` with `N` a basis of within-year contrasts.
fn null_space_oracle(sums: &[f64]) -> Vec<f64> {
    let n = sums.len();
    let m = 4 * n;
    let xp = DVector::from_fn(m, |i, _| sums[i / 4] / 4.0);
    let mut basis = DMatrix::zeros(m, 3 * n);
    for k in 0..n {
        for q in 0..3 {
            basis[(4 * k + q, 3 * k + q)] = 1.0;
            basis[(4 * k + q + 1, 3 * k + q)] = -1.0;
        }
    }
    let d = DMatrix::from_fn(m - 2, m, |r, c| match c as isize - r as isize {
        0 | 2 => 1.0,
        1 => -2.0,
        _ => 0.0,
    });
    let dn = &d * &basis;
    let y = (dn.tr_mul(&dn)).lu().solve(&(-dn.tr_mul(&(&d * &xp)))).unwrap();
    (xp + basis * y).iter().copied().collect()
}

#[test]
fn quadratic_interpolation_matches_constrained_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    for n in [3, 5, 12] {
        let lows: Vec<f64> = standard_normal_vector(n, &mut rng).iter().map(|v| 10.0 + 3.0 * v).collect();
        for mode in [AggregationMode::Sum, AggregationMode::Mean] {
            let q = quadratic_interpolate(&lows, mode).unwrap();
            assert_eq!(q.len(), 4 * n);
            for (k, low) in lows.iter().enumerate() {
                let block: f64 = q[4 * k..4 * k + 4].iter().sum();
                let agg = if mode == AggregationMode::Sum { block } else { block / 4.0 };
                assert!((agg - low).abs() < 1e-9);
            }
            let sums: Vec<f64> = match mode {
                AggregationMode::Sum => lows.clone(),
                AggregationMode::Mean => lows.iter().map(|v| 4.0 * v).collect(),
            };
            let oracle = null_space_oracle(&sums);
            for (a, b) in q.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn linear_annual_trend_is_reproduced_exactly() {
    // Annual sums of a linear quarterly path; the linear path has zero second
    // differences and satisfies the constraints, so it is the minimiser.
    let quarterly: Vec<f64> = (0..24).map(|i| 2.0 + 0.5 * i as f64).collect();
    let sums: Vec<f64> = quarterly.chunks(4).map(|c| c.iter().sum()).collect();
    let q = quadratic_interpolate(&sums, AggregationMode::Sum).unwrap();
    for (a, b) in q.iter().zip(&quarterly) {
        assert!((a - b).abs() < 1e-9);
    }
}

fn meta(name: &str, tcode: u8, speed: Speed) -> VariableMeta {
    VariableMeta {
        name: name.into(),
        tcode: Tcode::new(tcode).unwrap(),
        speed,
        interpolation: Interpolation::None,
        seasonal: false,
        native_frequency: NativeFrequency::Quarterly,
    }
}

fn write_files(dir: &std::path::Path, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = 60;
    let start = Quarter::new(1990, 1).unwrap();
    let dates: Vec<Quarter> = (0..t).map(|i| start.offset(i)).collect();
    let mut level = 100.0;
    let gdp: Vec<Option<f64>> = standard_normal_vector(t as usize, &mut rng)
        .iter()
        .map(|e| {
            level *= 1.0 + 0.005 + 0.01 * e;
            Some(level)
        })
        .collect();
    let infl: Vec<Option<f64>> = standard_normal_vector(t as usize, &mut rng).iter().map(|e| Some(2.0 + e)).collect();
    let rate: Vec<Option<f64>> = standard_normal_vector(t as usize, &mut rng).iter().map(|e| Some(3.0 + 0.5 * e)).collect();
    let mut wages: Vec<Option<f64>> = vec![None; t as usize];
    for (y, v) in (0..15).zip([50.0, 52.0, 51.0, 55.0, 56.0, 58.0, 57.0, 60.0, 61.0, 64.0, 63.0, 66.0, 68.0, 67.0, 70.0]) {
        wages[y * 4 + 2] = Some(v);
    }
    let series = vec![
        RawSeries { name: "GDP".into(), dates: dates.clone(), values: gdp },
        RawSeries { name: "INFL".into(), dates: dates.clone(), values: infl },
        RawSeries { name: "WAGES".into(), dates: dates.clone(), values: wages },
        RawSeries { name: "RATE".into(), dates: dates.clone(), values: rate },
    ];
    let mut wmeta = meta("WAGES", 5, Speed::Slow);
    wmeta.native_frequency = NativeFrequency::Annual;
    wmeta.interpolation = Interpolation::Mean;
    let metas = vec![meta("GDP", 5, Speed::Slow), meta("INFL", 1, Speed::Slow), wmeta, meta("RATE", 1, Speed::Fast)];
    let data = dir.join("data.csv");
    let md = dir.join("meta.csv");
    write_raw_csv(&data, &dates, &series).unwrap();
    write_metadata_csv(&md, &metas).unwrap();
    (data, md)
}

fn opts() -> PrepareOptions {
    PrepareOptions { policy_name: "RATE".into(), adf_max_lag: None }
}

#[test]
fn files_load_prepare_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, md) = write_files(dir.path(), 82);
    let (raw, metas) = load_panel(&data, &md, None).unwrap();
    let (panel, report) = prepare(&raw, &metas, &opts()).unwrap();
    assert_eq!(panel.periods(), 59);
    assert_eq!(panel.dates[0], Quarter::new(1990, 2).unwrap());
    assert_eq!(report.entries.len(), 4);
    for j in panel.x_columns() {
        let col = panel.data.column(j);
        assert!(col.mean().abs() < 1e-10);
        assert!((col.variance() * 59.0 / 58.0 - 1.0).abs() < 1e-10);
    }
    let p = panel.policy_index();
    assert!(panel.data.column(p).mean().abs() < 1e-10);
    assert_eq!(panel.standardization[p].stddev, 1.0);
    let out = dir.path().join("prepared");
    write_prepared(&out, &panel, &report).unwrap();
    let (back, _) = read_prepared(&out).unwrap();
    assert_eq!(back, panel);
}

#[test]
fn missing_and_unknown_variables_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let (data, md) = write_files(dir.path(), 83);
    let text = std::fs::read_to_string(&md).unwrap();
    let without_infl: Vec<&str> = text.lines().filter(|l| !l.starts_with("INFL")).collect();
    std::fs::write(&md, without_infl.join("\n")).unwrap();
    let err = load_panel(&data, &md, None).unwrap_err().to_string();
    assert!(err.contains("INFL"), "{err}");

    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines.push("GHOST,1,slow,none,false,quarterly".into());
    std::fs::write(&md, lines.join("\n")).unwrap();
    let err = load_panel(&data, &md, None).unwrap_err().to_string();
    assert!(err.contains("GHOST"), "{err}");
}

#[test]
fn constant_series_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let (data, md) = write_files(dir.path(), 84);
    let (mut raw, metas) = load_panel(&data, &md, None).unwrap();
    for v in raw[1].values.iter_mut() {
        *v = Some(4.0);
    }
    let err = prepare(&raw, &metas, &opts()).unwrap_err().to_string();
    assert!(err.contains("INFL"), "{err}");
}

#[test]
fn monthly_file_is_aggregated_onto_quarters() {
    let dir = tempfile::tempdir().unwrap();
    let (data, md) = write_files(dir.path(), 85);
    let mut text = std::fs::read_to_string(&md).unwrap();
    text.push_str("M2,1,fast,mean,false,monthly\n");
    std::fs::write(&md, text).unwrap();
    let mut monthly = String::from("date,M2\n");
    for i in 0..180 {
        monthly.push_str(&format!("{}-{:02},{}\n", 1990 + i / 12, i % 12 + 1, i as f64));
    }
    let mp = dir.path().join("monthly.csv");
    std::fs::write(&mp, monthly).unwrap();
    let (raw, metas) = load_panel(&data, &md, Some(&mp)).unwrap();
    let m2 = raw.iter().find(|s| s.name == "M2").unwrap();
    assert_eq!(m2.values[0], Some(1.0));
    assert_eq!(m2.values[1], Some(4.0));
    assert_eq!(m2.values[59], Some(178.0));
    assert_eq!(metas.last().unwrap().name, "M2");
}

#[test]
fn noiseless_dgp_lies_in_the_factor_and_policy_span() {
    let out = generate_favar_dgp(&DgpSpec { idio_noise_scale: 0.0, seed: 86, ..DgpSpec::default() }).unwrap();
    let x = out.panel.x_matrix();
    let pc = extract_principal_components(&x, out.params.factors() + 1).unwrap();
    let explained: f64 = pc.explained_variance_ratio.iter().sum();
    assert!(explained >= 0.9999, "{explained}");
}

#[test]
fn dgp_series_are_mostly_stationary_by_adf() {
    let out = generate_favar_dgp(&DgpSpec { t: 500, seed: 87, ..DgpSpec::default() }).unwrap();
    let x = out.panel.x_matrix();
    let rejected = (0..x.ncols())
        .filter(|&j| {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            adf_test(&col, None).unwrap().reject_unit_root_5pct
        })
        .count();
    assert!(rejected as f64 >= 0.9 * x.ncols() as f64, "{rejected} of {}", x.ncols());
}

#[test]
fn dgp_residual_covariance_matches_sigma() {
    let out = generate_favar_dgp(&DgpSpec { t: 5000, n: 20, seed: 88, ..DgpSpec::default() }).unwrap();
    let k = out.params.factors();
    let y = out.panel.y_matrix();
    let t = y.nrows();
    let z = DMatrix::from_fn(t, k + 1, |i, j| if j < k { out.factors[(i, j)] } else { y[(i, 0)] });
    let d = out.params.lags();
    let mut cov = DMatrix::<f64>::zeros(k + 1, k + 1);
    for s in d..t {
        let mut nu = z.row(s).transpose();
        for (l, g) in out.params.var_coeffs.iter().enumerate() {
            nu -= g * z.row(s - l - 1).transpose();
        }
        cov += &nu * nu.transpose();
    }
    cov /= (t - d) as f64;
    let rel = (&cov - &out.params.sigma).norm() / out.params.sigma.norm();
    assert!(rel < 0.10, "{rel}");
}
