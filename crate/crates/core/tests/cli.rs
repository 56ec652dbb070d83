use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_decay-ladder");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("DECAY_LADDER_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

/// Columns of a CSV file keyed by header.
fn columns(path: &Path) -> Vec<(String, Vec<f64>)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let mut cols: Vec<(String, Vec<f64>)> = header.into_iter().map(|h| (h, Vec::new())).collect();
    for line in lines {
        for (cell, col) in line.split(',').zip(cols.iter_mut()) {
            col.1.push(if cell.is_empty() { f64::NAN } else { cell.parse().unwrap() });
        }
    }
    cols
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    columns(path)
        .into_iter()
        .find(|(h, _)| h == name)
        .unwrap_or_else(|| panic!("no column {name}"))
        .1
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Small cloud with the same c√N as the experimental clouds (about 0.91 ξ).
fn small_run(xi: f64, n_realizations: u64, seed: u64) -> Value {
    json!({
        "cloud": {"n_total": 400, "f_exc": 0.5, "od": 0.894, "xi": xi},
        "grid": {"t_max_tau": 10.0, "n_samples": 401},
        "n_realizations": n_realizations,
        "seed": seed,
    })
}

fn simulate(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn independent_config_gives_exact_exponential() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = simulate(&configs_dir().join("independent.json"), &out, &[]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let t = column(&out.join("log.csv"), "t_over_tau");
    let ln_e = column(&out.join("log.csv"), "ln_E");
    for (t, l) in t.iter().zip(&ln_e) {
        assert!((l + t).abs() < 1e-6, "t/τ {t}: ln E {l}");
    }
    for name in ["summary.csv", "decay_time.json", "transition.json", "manifest.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let decay = read_json(&out.join("decay_time.json"));
    let tau_ns = read_json(&out.join("transition.json"))["tau_a_ns"].as_f64().unwrap();
    let mean = decay["energy"]["mean_tau_ns"].as_f64().unwrap();
    assert!((mean / tau_ns - 1.0).abs() < 1e-4);
}

#[test]
fn nominal_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut config: Value = read_json(&configs_dir().join("nominal.json"));
    config["n_realizations"] = json!(2);
    let path = write_json(dir.path(), "nominal.json", &config);
    let out = dir.path().join("run");
    let res = simulate(&path, &out, &["--threads", "1"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let e = column(&out.join("summary.csv"), "E");
    assert_eq!(e.len(), 1024);
    assert_eq!(e[0], 650_000.0);
    assert!(e.windows(2).all(|w| w[1] <= w[0]));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["subcommand"], "simulate");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["stats"]["n_exc"], 650_000);
}

#[test]
fn malformed_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"cloud\": {\"n_total\": 10,").unwrap();
    let out = dir.path().join("run");
    let res = simulate(&path, &out, &[]);
    assert_eq!(code(&res), 2);
    assert!(!out.exists());
}

#[test]
fn invalid_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_run(1.0, 2, 0);
    config["cloud"]["f_exc"] = json!(1.5);
    let path = write_json(dir.path(), "c.json", &config);
    let out = dir.path().join("run");
    let res = simulate(&path, &out, &[]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("f_exc"));
    assert!(!out.exists());

    let mut config = small_run(1.0, 2, 0);
    config["cloud"]["radius_m"] = json!(1e-4);
    let path = write_json(dir.path(), "c.json", &config);
    assert_eq!(code(&simulate(&path, &out, &[])), 2);

    let path = write_json(dir.path(), "c.json", &json!({"cloud": small_run(1.0, 2, 0)["cloud"], "typo": 1}));
    assert_eq!(code(&simulate(&path, &out, &[])), 2);
    assert_eq!(code(&simulate(&dir.path().join("missing.json"), &out, &[])), 2);
    assert_eq!(code(&simulate(&path, &out, &["--threads", "0"])), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_json(dir.path(), "c.json", &small_run(1.0, 70, 3));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&simulate(&path, &a, &["--threads", "1"])), 0);
    assert_eq!(code(&simulate(&path, &b, &["--threads", "3"])), 0);
    for name in ["summary.csv", "log.csv", "decay_time.json", "transition.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    assert_eq!(code(&simulate(&path, &c, &["--seed", "4"])), 0);
    assert_ne!(
        std::fs::read(a.join("summary.csv")).unwrap(),
        std::fs::read(c.join("summary.csv")).unwrap()
    );
    assert_eq!(read_json(&c.join("manifest.json"))["seed"], 4);
}

fn sweep(config: &Value, dir: &Path) -> (Output, PathBuf) {
    let path = write_json(dir, "sweep.json", config);
    let out = dir.join("sweep");
    let res = run(&["sweep", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (res, out.join("sweep.csv"))
}

#[test]
fn od_sweep_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = read_json(&configs_dir().join("sweep_od.json"));
    config["base"]["cloud"]["n_total"] = json!(2000);
    config["base"]["n_realizations"] = json!(100);
    let (res, csv) = sweep(&config, dir.path());
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let od = column(&csv, "od");
    let tau = column(&csv, "mean_tau_ns");
    assert_eq!(od.len(), 5);
    assert_eq!(od[0], 1.0);
    // rows are in input order, OD descending
    assert!(tau.windows(2).all(|w| w[0] >= w[1]), "{tau:?}");
}

#[test]
fn excitation_sweep_orders_decay_times() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = read_json(&configs_dir().join("sweep_fexc.json"));
    config["base"]["cloud"]["n_total"] = json!(4000);
    config["base"]["n_realizations"] = json!(100);
    let (res, csv) = sweep(&config, dir.path());
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let tau = column(&csv, "mean_tau_ns");
    assert_eq!(tau.len(), 2);
    assert!(tau[1] > tau[0], "{tau:?}");
}

#[test]
fn empty_sweep_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = json!({"base": small_run(1.0, 2, 0), "points": []});
    let (res, csv) = sweep(&config, dir.path());
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("points"));
    assert!(!csv.exists());
}

fn write_trace(path: &Path, header: &str, rows: impl Iterator<Item = (f64, f64)>) {
    let mut text = format!("{header}\n");
    for (t, v) in rows {
        text.push_str(&format!("{t:e},{v:e}\n"));
    }
    std::fs::write(path, text).unwrap();
}

fn fit(config: &Path, trace: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "fit",
        "--config",
        config.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn tau_a_ns() -> f64 {
    1e9 / (2.0 * std::f64::consts::PI * 6.02e6)
}

#[test]
fn fit_recovers_the_generating_xi() {
    let dir = tempfile::tempdir().unwrap();
    // long record, so the energy recovered from the power trace is unbiased
    let mut target = small_run(0.85, 60, 5);
    target["grid"] = json!({"t_max_tau": 60.0, "n_samples": 6001});
    let target_path = write_json(dir.path(), "target.json", &target);
    let sim = dir.path().join("target");
    assert_eq!(code(&simulate(&target_path, &sim, &[])), 0);
    let t = column(&sim.join("summary.csv"), "t_ns");
    let p = column(&sim.join("summary.csv"), "P_per_ns");
    let trace = dir.path().join("trace.csv");
    write_trace(&trace, "t_ns,counts", t.into_iter().zip(p));

    let base = write_json(dir.path(), "base.json", &small_run(1.0, 60, 5));
    let out = dir.path().join("fit");
    let res = fit(&base, &trace, &out, &[]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let result = read_json(&out.join("fit.json"));
    let xi = result["xi_star"].as_f64().unwrap();
    assert!((xi - 0.85).abs() < 0.05, "ξ* = {xi}");
    assert_eq!(result["n_realizations"], 60);
    assert!(read_json(&out.join("manifest.json"))["metadata"].is_null());
}

#[test]
fn fit_of_independent_decay_needs_no_correction() {
    let dir = tempfile::tempdir().unwrap();
    let tau = tau_a_ns();
    let trace = dir.path().join("trace.csv");
    write_trace(&trace, "t_ns,counts", (0..3000).map(|i| {
        let t = i as f64 * 0.01 * tau;
        (t, 1e4 * (-t / tau).exp())
    }));
    let base = write_json(dir.path(), "base.json", &small_run(1.0, 40, 6));
    let out = dir.path().join("fit");
    let res = fit(&base, &trace, &out, &[]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let xi = read_json(&out.join("fit.json"))["xi_star"].as_f64().unwrap();
    assert!(xi < 0.05, "ξ* = {xi}");
}

#[test]
fn fit_with_pulse_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let tau = tau_a_ns();
    // pulse ends at 100 ns; constant background of 5 counts before and after
    let t0 = 100.0;
    let times: Vec<f64> = (0..4000).map(|i| i as f64 * 0.1 * tau).collect();
    let trace = dir.path().join("run7.csv");
    write_trace(&trace, "t_ns,counts", times.iter().map(|&t| {
        let signal = if t >= t0 { 1e4 * (-(t - t0) / tau).exp() } else { 0.0 };
        (t, 5.0 + signal)
    }));
    let pulse = dir.path().join("pulse.csv");
    write_trace(&pulse, "t_ns,intensity", times.iter().map(|&t| {
        (t, if (50.0..t0).contains(&t) { 1.0 } else { 0.0 })
    }));
    write_json(dir.path(), "run7.json", &json!({"detuning": 0.0, "od": 0.6, "f_exc": 0.3}));
    let base = write_json(dir.path(), "base.json", &small_run(1.0, 20, 6));
    let out = dir.path().join("fit");
    let res = fit(&base, &trace, &out, &["--pulse", pulse.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["metadata"]["od"], 0.6);
    assert_eq!(manifest["config"]["cloud"]["od"], 0.6);
    assert_eq!(manifest["config"]["cloud"]["f_exc"], 0.3);
    assert_eq!(manifest["background"], 5.0);
    // the tail beyond t0 is a pure exponential once the background is gone
    let xi = read_json(&out.join("fit.json"))["xi_star"].as_f64().unwrap();
    assert!(xi < 0.05, "ξ* = {xi}");
}

#[test]
fn fit_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let tau = tau_a_ns();
    let trace = dir.path().join("trace.csv");
    write_trace(&trace, "t_ns,counts", (0..2000).map(|i| {
        let t = i as f64 * 0.01 * tau;
        (t, (-t / tau).exp())
    }));
    let out = dir.path().join("fit");

    let mut inverted = small_run(1.0, 2, 0);
    inverted["xi_bounds"] = json!([1.0, 0.5]);
    let base = write_json(dir.path(), "inv.json", &inverted);
    assert_eq!(code(&fit(&base, &trace, &out, &[])), 2);

    // five lifetimes of record, short of the fit window
    let short = dir.path().join("short.csv");
    write_trace(&short, "t_ns,counts", (0..100).map(|i| (i as f64 * 0.05 * tau, 1.0)));
    let base = write_json(dir.path(), "base.json", &small_run(1.0, 2, 0));
    assert_eq!(code(&fit(&base, &short, &out, &[])), 2);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t_ns,counts\n0,1\n1,-3\n").unwrap();
    assert_eq!(code(&fit(&base, &bad, &out, &[])), 2);
    assert!(!out.exists());
}

#[test]
fn oracle_reports_exact_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle");
    let o = out.to_str().unwrap();
    let res = run(&["oracle", "--n", "8", "--m", "3", "--trials", "3", "--seed", "2", "--out", o]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&out.join("oracle.json"));
    assert_eq!(report["N"], 8);
    let reports = report["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 3);
    for r in reports {
        assert_eq!(r["M"], 3);
        assert_eq!(r["dim"], 56);
        let (e, p) = (r["empirical_variance"].as_f64().unwrap(), r["predicted_variance"].as_f64().unwrap());
        assert!(((e - p) / p).abs() < 1e-10);
        for key in ["analytic_variance", "sigma_m9", "sigma_stimulated"] {
            assert!(r[key].as_f64().unwrap() > 0.0, "{key}");
        }
    }

    let res = run(&["oracle", "--n", "2", "--m", "1", "--trials", "1", "--out", o]);
    assert_eq!(code(&res), 0);
    let r = &read_json(&out.join("oracle.json"))["reports"][0];
    let (e, p) = (r["empirical_variance"].as_f64().unwrap(), r["predicted_variance"].as_f64().unwrap());
    assert!((e - p).abs() <= 1e-14 * p);

    let bad = dir.path().join("bad");
    let b = bad.to_str().unwrap();
    assert_eq!(code(&run(&["oracle", "--n", "4", "--m", "5", "--out", b])), 2);
    assert_eq!(code(&run(&["oracle", "--n", "4", "--trials", "0", "--out", b])), 2);
    assert!(!bad.exists());
}
