use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use favar_cli::config::RunConfig;

fn favar(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_favar"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("run favar")
}

fn ok(config: &Path, args: &[&str]) {
    let out = favar(config, args);
    assert!(out.status.success(), "favar {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL: &str = "seed = 5\nsim_series = 12\nsim_periods = 60\nsim_factors = 2\nsim_lags = 1\n\
                     factors = 2\nlags = 1\ndraws = 120\nburn_in = 20\nthin = 1\nhorizon = 12\n";

/// Rewrites the config with `extra` keys replacing existing ones.
fn set_keys(path: &Path, extra: &str) {
    let text = fs::read_to_string(path).unwrap_or_default();
    let key = |l: &str| l.split('=').next().unwrap().trim().to_string();
    let new: Vec<String> = extra.lines().map(key).collect();
    let mut lines: Vec<&str> = text.lines().filter(|l| !new.contains(&key(l))).collect();
    lines.extend(extra.lines());
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn setup(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("data = \"out/data.csv\"\nmetadata = \"out/metadata.csv\"\noutput = \"out\"\n{SMALL}")).unwrap();
    set_keys(&path, extra);
    path
}

fn simulated(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), extra);
    ok(&cfg, &["simulate"]);
    (dir, cfg)
}

#[test]
fn simulate_then_prepare_gives_zero_mean_columns() {
    let (dir, cfg) = simulated("");
    ok(&cfg, &["prepare"]);
    let text = fs::read_to_string(dir.path().join("out/prepared/panel.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let n = rows[0].len();
    assert_eq!(n, 13);
    for j in 0..n {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
        assert!(mean.abs() < 1e-10, "column {j}: {mean}");
    }
    assert!(dir.path().join("out/prepared/screening.csv").exists());
}

#[test]
fn full_sized_panel_simulates_and_prepares() {
    let (dir, cfg) = simulated("sim_series = 116\nsim_periods = 136\nsim_factors = 3\nsim_lags = 4\n");
    ok(&cfg, &["prepare"]);
    let text = fs::read_to_string(dir.path().join("out/prepared/panel.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap().split(',').count(), 118);
    assert_eq!(text.lines().count(), 137);
}

#[test]
fn metadata_for_an_absent_column_is_a_named_data_error() {
    let (dir, cfg) = simulated("");
    let meta = dir.path().join("out/metadata.csv");
    let mut text = fs::read_to_string(&meta).unwrap();
    let last = text.lines().last().unwrap().to_string();
    let ghost = last.replacen(last.split(',').next().unwrap(), "GHOST_SERIES", 1);
    text.push_str(&ghost);
    text.push('\n');
    fs::write(&meta, text).unwrap();
    let out = favar(&cfg, &["prepare"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("GHOST_SERIES"), "{}", stderr(&out));
    assert!(!dir.path().join("out/prepared").exists());
}

#[test]
fn missing_input_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let out = favar(&cfg, &["prepare"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn config_problems_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "not_a_key = 1\n");
    assert_eq!(favar(&cfg, &["simulate"]).status.code(), Some(2));

    let cfg = setup(dir.path(), "burn_in = 500\n");
    let out = favar(&cfg, &["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out/data.csv").exists());

    let cfg = setup(dir.path(), "upper_quantile = 1.5\n");
    assert_eq!(favar(&cfg, &["simulate"]).status.code(), Some(2));
}

#[test]
fn more_factors_than_series_fails_before_any_compute() {
    let (dir, cfg) = simulated("");
    ok(&cfg, &["prepare"]);
    let out = favar(&cfg, &["--seed", "5", "estimate"]);
    assert!(out.status.success());
    fs::remove_file(dir.path().join("out/estimate.json")).unwrap();
    fs::remove_dir_all(dir.path().join("out/chains")).unwrap();

    set_keys(&cfg, "factors = 40");
    let out = favar(&cfg, &["estimate"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("exceeds"), "{}", stderr(&out));
    assert!(!dir.path().join("out/estimate.json").exists());
    assert!(!dir.path().join("out/chains").exists());
}

#[test]
fn unknown_irf_variable_is_a_config_error() {
    let (_dir, cfg) = simulated("");
    ok(&cfg, &["prepare"]);
    ok(&cfg, &["estimate"]);
    set_keys(&cfg, "irf_variables = [\"NOPE\"]");
    let out = favar(&cfg, &["irf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("NOPE"));
}

#[test]
fn irf_without_estimates_is_a_data_error() {
    let (_dir, cfg) = simulated("");
    ok(&cfg, &["prepare"]);
    assert_eq!(favar(&cfg, &["irf"]).status.code(), Some(3));
}

#[test]
fn explosive_policy_path_is_a_numerical_failure() {
    let (dir, cfg) = simulated("stationarity_max_redraws = 0\nvar_coef_prior_variance = 1e6\n");
    let data = dir.path().join("out/data.csv");
    let text = fs::read_to_string(&data).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let p = lines[0].split(',').position(|c| c == "POLICY").unwrap();
    for (t, line) in lines.iter_mut().skip(1).enumerate() {
        let mut cells: Vec<String> = line.split(',').map(String::from).collect();
        cells[p] = (1.2f64.powi(t as i32) * 1e-3).to_string();
        *line = cells.join(",");
    }
    fs::write(&data, lines.join("\n") + "\n").unwrap();
    ok(&cfg, &["prepare"]);
    let out = favar(&cfg, &["estimate"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("draw"), "{}", stderr(&out));
}

fn irf_values(path: &Path) -> Vec<[f64; 3]> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').skip(2).take(3).map(|v| v.parse().unwrap()).collect();
            [f[0], f[1], f[2]]
        })
        .collect()
}

#[test]
fn irf_is_byte_stable_and_linear_in_the_shock() {
    let (dir, cfg) = simulated("chains = 2\n");
    ok(&cfg, &["prepare"]);
    ok(&cfg, &["estimate"]);
    ok(&cfg, &["irf"]);
    let csv = dir.path().join("out/irf.csv");
    let first = fs::read(&csv).unwrap();
    ok(&cfg, &["irf"]);
    assert_eq!(first, fs::read(&csv).unwrap());
    let svg = fs::read_to_string(dir.path().join("out/irf.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("stroke-dasharray"));

    let base = irf_values(&csv);
    set_keys(&cfg, "shock_size = 0.5");
    ok(&cfg, &["irf"]);
    let doubled = irf_values(&csv);
    assert_eq!(base.len(), doubled.len());
    for (a, b) in base.iter().zip(&doubled) {
        for c in 0..3 {
            assert_eq!(b[c], 2.0 * a[c]);
        }
    }
}

#[test]
fn chains_differ_but_each_is_reproducible() {
    let (dir, cfg) = simulated("chains = 2\nworkers = 2\n");
    ok(&cfg, &["prepare"]);
    ok(&cfg, &["estimate"]);
    let out = dir.path().join("out/chains");
    let c0 = fs::read(out.join("chain_0/lambda_f.csv")).unwrap();
    let c1 = fs::read(out.join("chain_1/lambda_f.csv")).unwrap();
    assert_ne!(c0, c1);
    set_keys(&cfg, "chains = 1");
    ok(&cfg, &["estimate"]);
    assert_eq!(c0, fs::read(out.join("chain_0/lambda_f.csv")).unwrap());
}

#[test]
fn seed_and_out_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&cfg, &["--seed", "1", "--out", a.to_str().unwrap(), "simulate"]);
    ok(&cfg, &["--seed", "2", "--out", b.to_str().unwrap(), "simulate"]);
    assert_ne!(fs::read(a.join("data.csv")).unwrap(), fs::read(b.join("data.csv")).unwrap());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn sweep_reports_every_cell() {
    let (dir, cfg) = simulated("");
    ok(&cfg, &["prepare"]);
    ok(&cfg, &["sweep", "--sweep", "K=1..2", "d=1,2", "--workers", "2"]);
    let report = fs::read_to_string(dir.path().join("out/sweep/sweep.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(2) == Some("ok")), "{report}");
    let baseline = lines.iter().find(|l| l.starts_with("2,1,")).unwrap();
    assert_eq!(baseline.split(',').last(), Some("0"));
    assert!(dir.path().join("out/sweep/irf_K1_d2.csv").exists());

    let out = favar(&cfg, &["sweep", "--sweep", "Q=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn relative_paths_resolve_against_the_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("nested");
    fs::create_dir_all(&sub).unwrap();
    let cfg = setup(&sub, "");
    let loaded = RunConfig::load(&cfg).unwrap();
    assert_eq!(loaded.output, sub.join("out"));
    assert_eq!(loaded.data.unwrap(), sub.join("out/data.csv"));
}
