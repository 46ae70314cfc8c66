use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mqrm"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}

#[test]
fn ideal_defaults_write_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ideal"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(&dir.path().join("ideal.csv"));
    assert!(table.starts_with("D,x_star,T_star,F_star,E_eff\n"));
    assert_eq!(table.lines().count(), 4);
    let manifest: Value = serde_json::from_str(&read(&dir.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "ideal");
    assert_eq!(manifest["config"]["degeneracies"], serde_json::json!([1, 50, 1000]));
}

#[test]
fn reruns_are_byte_identical_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "w.json", r#"{"m": 3, "n": 6, "trials": 500, "seed": 4}"#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["wishart", "--config", cfg.to_str().unwrap(), "--threads", "1"], &a).status.success());
    assert!(run(&["wishart", "--config", cfg.to_str().unwrap(), "--threads", "2"], &b).status.success());
    for f in ["wishart_modes.csv", "wishart_histogram.csv", "manifest.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let c = dir.path().join("c");
    assert!(run(&["wishart", "--config", cfg.to_str().unwrap(), "--seed", "5"], &c).status.success());
    assert_ne!(read(&a.join("wishart_histogram.csv")), read(&c.join("wishart_histogram.csv")));
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "q.json",
        &format!(
            r#"{{"model": "{}", "g": 0.8, "grid": {{"log10_min": -2.5, "log10_max": 0.0, "points": 40}}}}"#,
            configs().join("reference_model.json").display()
        ),
    );
    let a = dir.path().join("a");
    assert!(run(&["qfi", "--config", cfg.to_str().unwrap()], &a).status.success());
    let b = dir.path().join("b");
    let o = run(&["qfi", "--config", a.join("manifest.json").to_str().unwrap()], &b);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&a.join("qfi.csv")), read(&b.join("qfi.csv")));
    assert_eq!(read(&a.join("manifest.json")), read(&b.join("manifest.json")));
}

#[test]
fn qfi_with_exact_and_trace_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "q.json",
        &format!(
            r#"{{"model": "{}", "g": 0.8, "grid": {{"log10_min": -2.0, "log10_max": -1.0, "points": 10}},
                "with_exact": true, "exact_n_max": 25, "tls_trace": true}}"#,
            configs().join("reference_model.json").display()
        ),
    );
    let o = run(&["qfi", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir.path().join("qfi.csv"));
    assert!(csv.starts_with("T,F_total,F_s1,F_bb,F_bd,F_dd,F_exact,F_tls_trace\n"));
    let aa = column(&csv, "F_total");
    let ex = column(&csv, "F_exact");
    assert!(aa.iter().zip(&ex).all(|(a, e)| (a - e).abs() <= 0.05 * e));
    let manifest: Value = serde_json::from_str(&read(&dir.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["exact_n_max"], 25);
}

#[test]
fn forced_extended_precision_agrees_above_hundredth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "q.json",
        &format!(
            r#"{{"model": "{}", "g": 0.8, "grid": {{"log10_min": -2.0, "log10_max": 0.5, "points": 20}}}}"#,
            configs().join("reference_model.json").display()
        ),
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["qfi", "--config", cfg.to_str().unwrap()], &a).status.success());
    assert!(run(&["qfi", "--config", cfg.to_str().unwrap(), "--precision", "extended"], &b).status.success());
    let x = column(&read(&a.join("qfi.csv")), "F_total");
    let y = column(&read(&b.join("qfi.csv")), "F_total");
    assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() <= 1e-8 * q));
}

#[test]
fn decoupled_sweep_point_gives_free_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        &format!(r#"{{"model": "{}", "g_values": [0.0], "n_max": 3}}"#, configs().join("reference_model.json").display()),
    );
    let o = run(&["spectrum", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let e = column(&read(&dir.path().join("exact_000.csv")), "energy");
    let mut free = Vec::new();
    for n in 0..=3 {
        for d in [-1.0, 1.0] {
            free.push(n as f64 + 0.02 * d);
        }
        for d in [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0] {
            free.push(n as f64 + 0.2 + 0.02 * d);
        }
    }
    free.sort_by(f64::total_cmp);
    assert_eq!(e.len(), free.len());
    assert!(e.iter().zip(&free).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!(dir.path().join("aa_000.csv").exists());
}

#[test]
fn single_trial_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "e.json",
        r#"{"d_g": 2, "d_e": 6, "g": 0.8, "omega_a": 0.25, "epsilon": 0.0625, "trials": 1, "master_seed": 9,
            "grid": {"log10_min": -2.0, "log10_max": 0.5, "points": 80}}"#,
    );
    let o = run(&["ensemble", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let heat = read(&dir.path().join("heatmap.csv"));
    assert!(heat.starts_with("t_bin,f_bin,count\n"));
    assert!(heat.lines().skip(1).all(|l| l.ends_with(",1")));
    assert!(read(&dir.path().join("peaks.csv")).starts_with("trial,peak_index,T_star,F_star\n"));
    let manifest: Value = serde_json::from_str(&read(&dir.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["excluded"], 0);
    assert_eq!(manifest["config"]["master_seed"], 9);
}

#[test]
fn peak_ratio_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["peak-ratio", "--config", configs().join("peak_ratio.json").to_str().unwrap()], dir.path());
    assert!(o.status.success());
    let r = column(&read(&dir.path().join("peak_ratio.csv")), "ratio");
    assert_eq!(r.len(), 6);
    assert!(r[0] < r[1] && r[1] < r[2] && r[3] < r[4] && r[4] < r[5]);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let reference = configs().join("reference_model.json");
    let empty = write(dir.path(), "s.json", &format!(r#"{{"model": "{}", "g_values": []}}"#, reference.display()));
    assert_eq!(run(&["spectrum", "--config", empty.to_str().unwrap()], dir.path()).status.code(), Some(2));
    let bad = write(
        dir.path(),
        "m.json",
        r#"{"omega_a": 0.2, "epsilon": 0.02, "delta_g": [2.0], "delta_e": [0.0], "coupling": [[[0.5, 0.0]]]}"#,
    );
    let q = write(dir.path(), "q.json", &format!(r#"{{"model": "{}"}}"#, bad.display()));
    assert_eq!(run(&["qfi", "--config", q.to_str().unwrap()], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["qfi"], dir.path()).status.code(), Some(2));
    let unknown = write(dir.path(), "u.json", r#"{"m": 2, "n": 3, "trials": 1, "colour": 1}"#);
    assert_eq!(run(&["wishart", "--config", unknown.to_str().unwrap()], dir.path()).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(
        dir.path(),
        "m.json",
        r#"{"omega_a": 0.2, "epsilon": 0.0, "delta_g": [0.0], "delta_e": [0.0], "coupling": [[[20.0, 0.0]]]}"#,
    );
    let cfg = write(dir.path(), "x.json", &format!(r#"{{"model": "{}"}}"#, m.display()));
    assert_eq!(run(&["exact", "--config", cfg.to_str().unwrap()], dir.path()).status.code(), Some(3));
}
