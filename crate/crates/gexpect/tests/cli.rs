//! End-to-end checks of the command-line interface: determinism of emitted
//! artifacts, exit codes, and the documented file formats.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gexpect(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gexpect"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, content: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, content).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sim.cfg",
        "[simulate]\nn_paths = 64\nn_steps = 32\n",
    );
    for out in ["a", "b"] {
        let run = gexpect(
            &["simulate", "--config", &cfg, "--seed", "7", "--out", out],
            tmp.path(),
        );
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let a = fs::read(tmp.path().join("a/paths.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/paths.csv")).unwrap();
    assert_eq!(a, b);
    let a = fs::read(tmp.path().join("a/qv_report.json")).unwrap();
    let b = fs::read(tmp.path().join("b/qv_report.json")).unwrap();
    assert_eq!(a, b);

    // Thread cap must not change results either.
    let run = gexpect(
        &[
            "simulate", "--config", &cfg, "--seed", "7", "--out", "c", "--threads", "1",
        ],
        tmp.path(),
    );
    assert!(run.status.success());
    let c = fs::read(tmp.path().join("c/paths.csv")).unwrap();
    assert_eq!(fs::read(tmp.path().join("a/paths.csv")).unwrap(), c);
}

#[test]
fn gheat_emits_surface_and_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "heat.cfg",
        "[grid]\nnx = 201\n\n[payoff]\nkind = power\nexponent = 2\n",
    );
    let run = gexpect(
        &["gheat", "--config", &cfg, "--out", "out", "--json"],
        tmp.path(),
    );
    assert!(run.status.success());
    let stdout = String::from_utf8(run.stdout).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let v = parsed["value_at_origin"].as_f64().unwrap();
    assert!((v - 1.0).abs() < 5e-3, "{v}");

    let surface = fs::read_to_string(tmp.path().join("out/gheat_surface.csv")).unwrap();
    assert!(surface.starts_with("t,x,u\n"));
    let meta = fs::read_to_string(tmp.path().join("out/gheat_meta.json")).unwrap();
    assert!(meta.contains("\"scheme\""));
}

#[test]
fn invalid_band_and_cfl_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.cfg", "[band]\nsigma_lo = 2.0\nsigma_hi = 1.0\n");
    let run = gexpect(&["gheat", "--config", &cfg], tmp.path());
    assert_eq!(run.status.code(), Some(2));

    // Unknown key is rejected at load.
    let cfg = write(tmp.path(), "unknown.cfg", "[band]\nwidth = 1.0\n");
    let run = gexpect(&["gheat", "--config", &cfg], tmp.path());
    assert_eq!(run.status.code(), Some(2));

    // A forced step count that breaks the CFL bound is a numerical error.
    let cfg = write(tmp.path(), "cfl.cfg", "[grid]\nnx = 801\nnt = 10\n");
    let run = gexpect(&["gheat", "--config", &cfg], tmp.path());
    assert_eq!(run.status.code(), Some(3));
}

#[test]
fn price_quote_degenerate_band_collapses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "price.cfg",
        "[band]\nsigma_lo = 0.7\nsigma_hi = 0.7\n\n[market]\nnx = 401\n",
    );
    let run = gexpect(
        &["price", "--config", &cfg, "--out", "q", "--json"],
        tmp.path(),
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let quote: serde_json::Value =
        serde_json::from_str(String::from_utf8(run.stdout).unwrap().trim()).unwrap();
    let bid = quote["bid"].as_f64().unwrap();
    let ask = quote["ask"].as_f64().unwrap();
    assert!((ask - bid).abs() < 2e-3, "bid {bid} ask {ask}");
    assert!(tmp.path().join("q/price_quote.json").exists());
}

#[test]
fn clt_table_has_decreasing_error_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "clt.cfg", "[clt]\nn_list = 4,16,64\n");
    let run = gexpect(&["clt", "--config", &cfg, "--out", "t"], tmp.path());
    assert!(run.status.success());
    let table = fs::read_to_string(tmp.path().join("t/clt_table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("n,value,abs_error"));
    let errors: Vec<f64> = lines
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errors.len(), 3);
    assert!(errors[2] < errors[0]);
}

#[test]
fn represent_round_trips_a_space_file() {
    let tmp = tempfile::tempdir().unwrap();
    let space = write(
        tmp.path(),
        "space.json",
        "{\"n_outcomes\": 3, \"measures\": [[0.2, 0.3, 0.5], [0.6, 0.1, 0.3]]}",
    );
    let cfg = write(
        tmp.path(),
        "rep.cfg",
        &format!("[represent]\nspace_file = {space}\ndirections = 120\nfresh = 300\n"),
    );
    let run = gexpect(
        &["represent", "--config", &cfg, "--out", "r", "--json"],
        tmp.path(),
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report: serde_json::Value =
        serde_json::from_str(String::from_utf8(run.stdout).unwrap().trim()).unwrap();
    assert!(report["max_abs_error"].as_f64().unwrap() <= 1e-6);
    let recovered = fs::read_to_string(tmp.path().join("r/recovered_space.json")).unwrap();
    assert!(recovered.contains("\"n_outcomes\": 3"));
}

#[test]
fn check_passes_by_default_and_fails_on_corrupt_space() {
    let tmp = tempfile::tempdir().unwrap();
    let run = gexpect(&["check"], tmp.path());
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stdout));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));

    let corrupt = write(
        tmp.path(),
        "corrupt.json",
        "{\"n_outcomes\": 2, \"measures\": [[1.2, -0.2]]}",
    );
    let cfg = write(
        tmp.path(),
        "check.cfg",
        &format!("[check]\nspace_file = {corrupt}\n"),
    );
    let run = gexpect(&["check", "--config", &cfg], tmp.path());
    assert_eq!(run.status.code(), Some(4));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("FAIL scenario-space file"));
}

#[test]
fn sde_and_bsde_commands_emit_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sde.cfg",
        "[sde]\nn_paths = 200\nn_steps = 64\n\n[bsde]\nn_steps = 4\n",
    );
    let run = gexpect(&["sde", "--config", &cfg, "--out", "s"], tmp.path());
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let log = fs::read_to_string(tmp.path().join("s/sde_iterations.csv")).unwrap();
    assert!(log.starts_with("iteration,weighted_norm\n"));
    assert!(log.lines().count() >= 3);

    let run = gexpect(&["bsde", "--config", &cfg, "--out", "s"], tmp.path());
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let values = fs::read_to_string(tmp.path().join("s/bsde_values.csv")).unwrap();
    assert!(values.starts_with("step,t,y_min,y_max\n"));
    assert_eq!(values.lines().count(), 1 + 5);
}

#[test]
fn gdrift_reports_interval_sup_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "drift.cfg",
        "[mean]\nmu_lo = 0.25\nmu_hi = 1.0\n\n[grid]\nx_min = -4\nx_max = 4\nnx = 401\n\n[payoff]\nkind = power\nexponent = 2\n",
    );
    let run = gexpect(
        &["gdrift", "--config", &cfg, "--out", "d", "--json"],
        tmp.path(),
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let parsed: serde_json::Value =
        serde_json::from_str(String::from_utf8(run.stdout).unwrap().trim()).unwrap();
    assert!((parsed["interval_sup"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(parsed["gap"].as_f64().unwrap() < 0.05);
}
