use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixedindep_cli::commands::{PowerRecord, QuantileReport, TestRecord};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixedindep"))
}

fn crate_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn write_temp(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_QUANTILES: &str = r#"
[[marginals]]
family = "exponential"
rate = 1.5

[[marginals]]
family = "poisson"
mean = 2.0

[study]
mode = "two-vector"
n = [30, 60]
replicates = 400
levels = [0.5, 0.9, 0.95, 0.99]
seed = 11

[[study.weights]]
a = 2.0
b = 1.0
"#;

#[test]
fn test_json_round_trips() {
    let out = run(bin()
        .args(["test", "--input"])
        .arg(crate_file("data/bike_sharing_sample.csv"))
        .args([
            "--x",
            "temp,windspeed",
            "--y",
            "count",
            "--perms",
            "99",
            "--json",
        ]));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let records: Vec<TestRecord> = serde_json::from_str(&text).unwrap();
    assert_eq!(records.len(), 4);
    assert_eq!(serde_json::to_string_pretty(&records).unwrap() + "\n", text);
    for r in &records {
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        assert_eq!(r.n, 200);
    }
}

#[test]
fn smoke_power_rates_are_all_or_nothing() {
    let out = run(bin()
        .args(["power", "--json", "--config"])
        .arg(crate_file("configs/smoke.toml")));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records: Vec<PowerRecord> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(records.len(), 4);
    for r in records {
        assert!(
            r.rejection_rate_pct == 0.0 || r.rejection_rate_pct == 100.0,
            "{r:?}"
        );
    }
}

#[test]
fn json_output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = crate_file("configs/smoke.toml");
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let file = dir.path().join(format!("power-{threads}.json"));
        let out = run(bin()
            .env("MIXEDINDEP_THREADS", threads)
            .args(["power", "--json", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&file));
        assert!(out.status.success());
        assert_eq!(std::fs::read(&file).unwrap(), out.stdout);
        outputs.push(out.stdout);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn quantiles_increase_with_level_and_report_the_limit() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_temp(&dir, "q.toml", SMALL_QUANTILES);
    let out = run(bin().args(["quantiles", "--json", "--config"]).arg(&config));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: QuantileReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.records.len(), 2);
    for r in &report.records {
        assert!(
            r.quantiles.windows(2).all(|w| w[0] <= w[1]),
            "{:?}",
            r.quantiles
        );
    }
    assert!((report.limit[2] - 1.959964).abs() < 1e-5);

    let text = run(bin().args(["quantiles", "--config"]).arg(&config));
    let text = String::from_utf8(text.stdout).unwrap();
    assert!(
        text.lines().any(|l| l.trim_start().starts_with("limit")),
        "{text}"
    );
}

#[test]
fn usage_and_config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(bin().args(["power", "--config", "/nonexistent/config.toml"]));
    assert_eq!(missing.status.code(), Some(2));

    let bad = write_temp(&dir, "bad.toml", "[study]\nn = 10\n");
    assert_eq!(
        run(bin().args(["power", "--config"]).arg(&bad))
            .status
            .code(),
        Some(2)
    );

    let csv = write_temp(&dir, "d.csv", "x,y\n1.0,2\n2.0,3\n");
    let unknown = run(bin()
        .args(["test", "--input"])
        .arg(&csv)
        .args(["--x", "nope", "--y", "y"]));
    assert_eq!(unknown.status.code(), Some(2));

    let text = write_temp(&dir, "t.csv", "x,y\n1.0,2\nabc,3\n");
    let non_numeric = run(bin()
        .args(["test", "--input"])
        .arg(&text)
        .args(["--x", "x", "--y", "y"]));
    assert_eq!(non_numeric.status.code(), Some(2));
}

#[test]
fn invalid_cells_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in [
        ("neg.csv", "x,y\n1.0,2\n-1.0,3\n"),
        ("frac.csv", "x,y\n1.0,2\n2.0,3.5\n"),
        ("zero.csv", "x,y\n0.0,2\n2.0,3\n"),
    ] {
        let csv = write_temp(&dir, name, body);
        let out = run(bin()
            .args(["test", "--input"])
            .arg(&csv)
            .args(["--x", "x", "--y", "y"]));
        assert_eq!(
            out.status.code(),
            Some(3),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn asymptotic_request_on_small_sample_falls_back_with_a_note() {
    let out = run(bin()
        .args(["test", "--input"])
        .arg(crate_file("data/bike_sharing_sample.csv"))
        .args([
            "--x",
            "temp",
            "--y",
            "count",
            "--stat",
            "sti",
            "--perms",
            "49",
            "--asymptotic",
            "--json",
        ]));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("note:"));
    let records: Vec<TestRecord> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(records[0].permutations, Some(49));
}
