//! Drives the installed binary through its public contract: flag parsing,
//! trace emission, exit codes, oracle round-trips, and the verify suites.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proxqn_cli::trace;
use proxqn_cli::OracleFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_proxqn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Identity design: each sample touches one feature, so the optimum is a
/// coordinatewise soft threshold and every check has a closed form.
fn write_identity_csv(dir: &Path, targets: &[f64]) -> PathBuf {
    let path = dir.join("identity.csv");
    let n = targets.len();
    let mut text = String::new();
    for (i, t) in targets.iter().enumerate() {
        let mut row: Vec<String> = (0..n)
            .map(|j| if i == j { "1.0".into() } else { "0.0".into() })
            .collect();
        row.push(format!("{}", t));
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(&path, text).unwrap();
    path
}

fn write_logistic_svm(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.svm");
    fs::write(
        &path,
        "+1 1:0.5 2:1.0\n-1 1:-0.3 2:0.2\n+1 2:0.8\n-1 1:0.1 2:-0.4\n",
    )
    .unwrap();
    path
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// F* of the identity instance: prox of each coordinate at threshold
/// N*lambda, then the composite objective at that point.
fn identity_fstar(targets: &[f64], lambda: f64) -> f64 {
    let n = targets.len() as f64;
    let mut value = 0.0;
    for &b in targets {
        let x = soft(b, n * lambda);
        value += (x - b) * (x - b) / (2.0 * n) + lambda * x.abs();
    }
    value
}

const TARGETS: [f64; 4] = [2.0, -1.5, 0.25, 0.8];

#[test]
fn solve_trace_echoes_defaults_and_converges() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_identity_csv(dir.path(), &TARGETS);
    let out = run(&[
        "solve", "--loss", "lasso", "--data", data.to_str().unwrap(),
        "--lambda", "0.1", "--tol", "1e-10",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {:?}", out.stderr);

    let parsed = trace::parse_csv(&stdout_of(&out)).unwrap();
    let meta = &parsed.meta;
    assert_eq!(meta.get("rho"), Some("1.0000000000000000e-2"));
    assert_eq!(meta.get("beta"), Some("5.0000000000000000e-1"));
    assert_eq!(meta.get("mu-bar"), Some("1.0000000000000000e0"));
    assert_eq!(meta.get("memory"), Some("10"));
    assert_eq!(meta.get("rng"), Some("splitmix64"));
    assert_eq!(meta.get("inner"), Some("rcd"));
    assert_eq!(meta.get("accept"), Some("prox"));
    assert_eq!(meta.get("budget"), Some("paper"));
    assert_eq!(meta.get("status"), Some("converged"));
    assert_eq!(meta.get("samples"), Some("4"));
    assert_eq!(meta.get("features"), Some("4"));
    assert_eq!(meta.get("dataset-hash").map(str::len), Some(16));

    let rows = &parsed.rows;
    assert!(rows.len() >= 2);
    assert_eq!(rows[0].k, 0);
    assert_eq!(rows[0].nnz, 0);
    assert_eq!(rows.last().unwrap().k as usize + 1, rows.len());
    assert!(rows.last().unwrap().subgrad_inf <= 1e-10);
    let fstar = identity_fstar(&TARGETS, 0.1);
    assert!((rows.last().unwrap().f_value - fstar).abs() <= 1e-12 * (1.0 + fstar.abs()));
}

#[test]
fn reruns_are_byte_identical_outside_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_identity_csv(dir.path(), &TARGETS);
    for format in ["csv", "jsonl"] {
        let args = [
            "solve", "--loss", "lasso", "--data", data.to_str().unwrap(),
            "--lambda", "0.05", "--seed", "11", "--format", format,
        ];
        let first = run(&args);
        let second = run(&args);
        assert_eq!(exit_code(&first), 0);
        assert_eq!(exit_code(&second), 0);
        let a = trace::deterministic_body(&stdout_of(&first));
        let b = trace::deterministic_body(&stdout_of(&second));
        assert!(!a.is_empty());
        assert_eq!(a, b, "rerun diverged under format {}", format);
    }
}

#[test]
fn huge_lambda_stops_at_zero_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_logistic_svm(dir.path());
    let out = run(&[
        "solve", "--loss", "logistic", "--data", data.to_str().unwrap(),
        "--lambda", "1e9",
    ]);
    assert_eq!(exit_code(&out), 0);
    let parsed = trace::parse_csv(&stdout_of(&out)).unwrap();
    let rows = &parsed.rows;
    assert!(rows.last().unwrap().k <= 1, "took {} iterations", rows.last().unwrap().k);
    assert_eq!(rows.last().unwrap().nnz, 0);
    // F(0) for the mean logistic loss is ln 2 regardless of the data.
    let ln2 = std::f64::consts::LN_2;
    assert!((rows.last().unwrap().f_value - ln2).abs() <= 1e-12);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_identity_csv(dir.path(), &TARGETS);

    let missing = run(&["solve", "--loss", "lasso", "--data", "/no/such/file.csv", "--lambda", "0.1"]);
    assert_eq!(exit_code(&missing), 1);
    assert!(!missing.stderr.is_empty());

    let bad_budget = run(&[
        "solve", "--loss", "lasso", "--data", data.to_str().unwrap(),
        "--lambda", "0.1", "--budget", "quadratic",
    ]);
    assert_eq!(exit_code(&bad_budget), 1);

    let bad_lambda = run(&[
        "solve", "--loss", "lasso", "--data", data.to_str().unwrap(), "--lambda", "-1",
    ]);
    assert_eq!(exit_code(&bad_lambda), 1);

    let capped = run(&[
        "solve", "--loss", "lasso", "--data", data.to_str().unwrap(),
        "--lambda", "0.1", "--tol", "1e-10", "--max-iter", "1",
    ]);
    assert_eq!(exit_code(&capped), 2);

    // Steep quadratic plus an undershooting frozen metric: the single
    // permitted trial overshoots and is rejected.
    let stiff = dir.path().join("stiff.csv");
    fs::write(&stiff, "10,0,5\n0,10,-5\n").unwrap();
    let stalled = run(&[
        "solve", "--loss", "lasso", "--data", stiff.to_str().unwrap(),
        "--lambda", "0.1", "--rho", "0.9", "--max-backtracks", "0",
    ]);
    assert_eq!(exit_code(&stalled), 3);

    let help = run(&["--help"]);
    assert_eq!(exit_code(&help), 0);
}

#[test]
fn oracle_matches_soft_thresholding_and_reruns_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_identity_csv(dir.path(), &TARGETS);
    let args = [
        "oracle", "--loss", "lasso", "--data", data.to_str().unwrap(), "--lambda", "0.1",
    ];
    let first = run(&args);
    assert_eq!(exit_code(&first), 0, "stderr: {:?}", first.stderr);
    let file: OracleFile = serde_json::from_str(&stdout_of(&first)).unwrap();
    assert!(file.certified);
    let expected = identity_fstar(&TARGETS, 0.1);
    assert!((file.fstar - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
    let n = TARGETS.len() as f64;
    for (i, &b) in TARGETS.iter().enumerate() {
        assert!((file.xstar[i] - soft(b, n * 0.1)).abs() <= 1e-10);
    }

    let second = run(&args);
    let again: OracleFile = serde_json::from_str(&stdout_of(&second)).unwrap();
    assert!((again.fstar - file.fstar).abs() <= 1e-10);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn oracle_at_huge_lambda_reports_the_loss_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_identity_csv(dir.path(), &TARGETS);
    let out = run(&[
        "oracle", "--loss", "lasso", "--data", data.to_str().unwrap(), "--lambda", "1e9",
    ]);
    assert_eq!(exit_code(&out), 0);
    let file: OracleFile = serde_json::from_str(&stdout_of(&out)).unwrap();
    // f(0) = (1/2N) ||b||^2 with the identity design.
    let n = TARGETS.len() as f64;
    let f0: f64 = TARGETS.iter().map(|b| b * b).sum::<f64>() / (2.0 * n);
    assert!((file.fstar - f0).abs() <= 1e-14 * (1.0 + f0));
    assert!(file.xstar.iter().all(|&v| v == 0.0));
}

#[test]
fn oracle_feeds_fstar_and_enables_the_relative_gap_stop() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_identity_csv(dir.path(), &TARGETS);
    let oracle_path = dir.path().join("oracle.json");
    let oracle = run(&[
        "oracle", "--loss", "lasso", "--data", data.to_str().unwrap(),
        "--lambda", "0.1", "--out", oracle_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&oracle), 0);

    let solve = run(&[
        "solve", "--loss", "lasso", "--data", data.to_str().unwrap(),
        "--lambda", "0.1", "--fstar", oracle_path.to_str().unwrap(), "--tol", "0",
    ]);
    assert_eq!(exit_code(&solve), 0);
    let parsed = trace::parse_csv(&stdout_of(&solve)).unwrap();
    assert!(parsed.meta.get("fstar").is_some());
    let last = parsed.rows.last().unwrap();
    assert!(last.rel_gap.is_finite());
    assert!(last.rel_gap <= 1e-8);

    // A bare float is accepted in place of the file.
    let inline = run(&[
        "solve", "--loss", "lasso", "--data", data.to_str().unwrap(),
        "--lambda", "0.1", "--fstar", "0.25", "--tol", "1e-8",
    ]);
    assert_eq!(exit_code(&inline), 0);
    let parsed = trace::parse_csv(&stdout_of(&inline)).unwrap();
    assert!(parsed.rows.last().unwrap().rel_gap.is_finite());
}

#[test]
fn csv_and_libsvm_loaders_hash_the_same_content_identically() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_identity_csv(dir.path(), &[2.0, -1.5, 0.25]);
    let svm = dir.path().join("identity.svm");
    fs::write(&svm, "2 1:1\n-1.5 2:1\n0.25 3:1\n").unwrap();

    let mut hashes = Vec::new();
    for path in [&csv, &svm] {
        let out = run(&[
            "solve", "--loss", "lasso", "--data", path.to_str().unwrap(), "--lambda", "0.1",
        ]);
        assert_eq!(exit_code(&out), 0);
        let parsed = trace::parse_csv(&stdout_of(&out)).unwrap();
        hashes.push(parsed.meta.get("dataset-hash").unwrap().to_string());
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn verify_reports_jsonl_and_exits_clean_on_a_healthy_build() {
    let out = run(&["verify", "--suite", "lemmas", "--seeds", "2", "--size-cap", "10"]);
    assert_eq!(exit_code(&out), 0, "stderr: {:?}", String::from_utf8_lossy(&out.stderr));
    let stdout = stdout_of(&out);
    let mut checks = 0;
    for line in stdout.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(record["pass"], true, "failing record: {}", line);
        assert!(record["suite"].is_string());
        assert!(record["name"].is_string());
        checks += 1;
    }
    assert!(checks >= 10, "only {} checks emitted", checks);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("0 violations"), "stderr: {}", stderr);
}

#[test]
fn solve_writes_the_trace_to_a_file_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_identity_csv(dir.path(), &TARGETS);
    let trace_path = dir.path().join("run.csv");
    let out = run(&[
        "solve", "--loss", "lasso", "--data", data.to_str().unwrap(),
        "--lambda", "0.1", "--out", trace_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    assert!(out.stdout.is_empty());
    let text = fs::read_to_string(&trace_path).unwrap();
    assert!(trace::parse_csv(&text).unwrap().rows.len() >= 2);
}
