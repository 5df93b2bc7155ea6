use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn mechlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mechlearn")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, config: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    mechlearn(&args)
}

fn stdout_path(output: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8(output.stdout.clone()).unwrap().trim())
}

#[test]
fn decoupled_run_converges_to_the_oracle() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &json!({"N": 4, "d": 2, "seed": 3, "coupling_strength": 0.0}));
    let out = dir.path().join("run");
    let output = simulate(&config, &out, &[]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(stdout_path(&output), out.join("report.json"));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["converged"], json!(true));
    assert!(report["gap"].as_f64().unwrap().abs() < 1e-8);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().next().unwrap().starts_with("t,round,agent"));
}

#[test]
fn aggregate_cycle_exits_with_oscillation_code() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        &json!({"N": 3, "d": 1, "layout": "aggregate", "coupling_strength": 1.0,
                "polling": {"mode": "simultaneous", "schedule": {"lambda": 2.0}}}),
    );
    let out = dir.path().join("run");
    let output = simulate(&config, &out, &[]);
    assert_eq!(output.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(read_json(&out.join("report.json"))["status"], json!("oscillation"));

    // Last rows alternate between two points.
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let rows: Vec<Vec<f64>> = trace
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(2) == Some("0"))
        .map(|l| l.split(',').skip(3).take(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let n = rows.len();
    assert!(n >= 4);
    assert!((rows[n - 1][0] - rows[n - 3][0]).abs() < 1e-10);
    assert!((rows[n - 1][0] - rows[n - 2][0]).abs() > 1e-3);

    let output = simulate(&config, &dir.path().join("tik"), &["--mode", "tikhonov"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn strong_pair_converges_under_tikhonov_and_sequential() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        &json!({"N": 2, "d": 1, "layout": "canonical_pair", "coupling_strength": 10.0,
                "polling": {"schedule": {"lambda": 20.0}, "max_rounds": 20000}}),
    );
    for mode in ["tikhonov", "sequential"] {
        let out = dir.path().join(mode);
        let output = simulate(&config, &out, &["--mode", mode]);
        assert_eq!(output.status.code(), Some(0), "{mode}: {}", String::from_utf8_lossy(&output.stderr));
        assert!(read_json(&out.join("report.json"))["gap"].as_f64().unwrap() < 1e-8);
    }
}

fn excited_run(dir: &Path) -> PathBuf {
    let config = write_config(
        dir,
        "c.json",
        &json!({"N": 2, "d": 2, "seed": 11, "horizon": 8, "coupling_strength": 0.5, "probe_price_std": 0.5}),
    );
    let out = dir.join("run");
    let output = simulate(&config, &out, &[]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    out
}

fn identify(log: &Path, dynamics: &Path, out: &Path) -> Output {
    mechlearn(&[
        "identify",
        "--log",
        log.to_str().unwrap(),
        "--dynamics",
        dynamics.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ])
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    v.as_array().unwrap().iter().map(|row| row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()).collect()
}

#[test]
fn identify_recovers_ground_truth_from_simulated_log() {
    let dir = TempDir::new().unwrap();
    let run = excited_run(dir.path());
    let out = dir.path().join("models");
    let output = identify(&run.join("observations.csv"), &run.join("dynamics.json"), &out);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(stdout_path(&output), out.join("models.json"));

    let truth = read_json(&run.join("instance.json"));
    for n in 0..2 {
        let model = read_json(&out.join(format!("model_{n}.json")));
        for (key, field) in [("q_hat", "q"), ("r_hat", "r")] {
            let est = matrix(&model[key]);
            let exact = matrix(&truth[n][field]);
            for (a, b) in est.iter().flatten().zip(exact.iter().flatten()) {
                assert!((a - b).abs() < 1e-6, "agent {n} {key}: {a} vs {b}");
            }
        }
        for key in ["c", "d", "residual", "rank"] {
            assert!(!model[key].is_null(), "missing {key}");
        }
    }
}

#[test]
fn identify_reports_rank_deficiency_on_short_log() {
    let dir = TempDir::new().unwrap();
    let run = excited_run(dir.path());
    let full = fs::read_to_string(run.join("observations.csv")).unwrap();
    // Header plus three rows leaves each agent below 2d = 4 samples.
    let short: Vec<&str> = full.lines().take(4).collect();
    let log = dir.path().join("short.csv");
    fs::write(&log, short.join("\n") + "\n").unwrap();
    let output = identify(&log, &run.join("dynamics.json"), &dir.path().join("models"));
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("agent 0") && stderr.contains("rank"), "stderr: {stderr}");
}

#[test]
fn identify_names_the_corrupted_row() {
    let dir = TempDir::new().unwrap();
    let run = excited_run(dir.path());
    let full = fs::read_to_string(run.join("observations.csv")).unwrap();
    let mut lines: Vec<String> = full.lines().map(str::to_string).collect();
    let mut fields: Vec<String> = lines[3].split(',').map(str::to_string).collect();
    fields[4] = "not-a-number".into();
    lines[3] = fields.join(",");
    let log = dir.path().join("bad.csv");
    fs::write(&log, lines.join("\n") + "\n").unwrap();
    let output = identify(&log, &run.join("dynamics.json"), &dir.path().join("models"));
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("row 3"), "stderr: {stderr}");
}

fn compare(config: &Path, out: &Path) -> Value {
    let output = mechlearn(&["compare", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    read_json(&stdout_path(&output))
}

#[test]
fn compare_agrees_across_modes_on_weak_pair() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        &json!({"N": 2, "d": 1, "layout": "canonical_pair", "coupling_strength": 0.1,
                "polling": {"tol": 1e-10, "max_rounds": 5000,
                            "schedule": {"tau": 0.1, "lambda": 100.0, "gamma": 0.1}}}),
    );
    let report = compare(&config, &dir.path().join("cmp"));
    let modes = report["modes"].as_array().unwrap();
    assert_eq!(modes.len(), 5);
    let oracle = report["oracle_welfare"].as_f64().unwrap();
    for row in modes {
        for key in ["mode", "iterations", "final_welfare", "gap"] {
            assert!(!row[key].is_null(), "missing {key} in {row}");
        }
        assert_eq!(row["status"], json!("converged"), "{row}");
        assert!((row["final_welfare"].as_f64().unwrap() - oracle).abs() < 1e-6);
    }
    assert!(report["max_limit_spread"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn compare_decoupled_full_step_modes_are_fast() {
    let dir = TempDir::new().unwrap();
    let n = 3;
    let config = write_config(dir.path(), "c.json", &json!({"N": n, "d": 2, "seed": 5}));
    let report = compare(&config, &dir.path().join("cmp"));
    for row in report["modes"].as_array().unwrap() {
        let mode = row["mode"].as_str().unwrap();
        // Incremental modes move by at most a fraction of the gap per round.
        if matches!(mode, "simultaneous" | "sequential") {
            assert_eq!(row["status"], json!("converged"), "{row}");
            assert!(row["iterations"].as_u64().unwrap() <= n + 1, "{row}");
        }
    }
}

#[test]
fn reports_are_reproducible_apart_from_wall_time() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        &json!({"N": 3, "d": 2, "seed": 9, "horizon": 3, "coupling_strength": 1.0, "noise_std": 0.01}),
    );
    let mut reports = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.path().join(tag);
        assert_eq!(simulate(&config, &out, &[]).status.code(), Some(0));
        let mut report = read_json(&out.join("report.json"));
        report.as_object_mut().unwrap().remove("wall_time_ms");
        reports.push((report, fs::read(out.join("trace.csv")).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);

    let out = dir.path().join("seeded");
    assert_eq!(simulate(&config, &out, &["--seed", "10"]).status.code(), Some(0));
    assert_eq!(read_json(&out.join("report.json"))["config"]["seed"], json!(10));
}

#[test]
fn bad_config_exits_with_error() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &json!({"d": 2}));
    let output = simulate(&config, &dir.path().join("run"), &[]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("`N`"));
}
