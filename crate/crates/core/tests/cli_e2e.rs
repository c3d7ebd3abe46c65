use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughdyadic"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("ROUGHDYADIC_THREADS")
        .output()
        .expect("binary runs")
}

const LEM1A: &[&str] = &["verify", "--lemma", "lem1a", "--m", "2..6", "--n", "1..7", "--samples", "4000", "--seed", "5"];

#[test]
fn verify_writes_rows_and_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(LEM1A, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = std::fs::read_to_string(dir.path().join("lem1a/estimates.csv")).unwrap();
    assert!(rows.starts_with("lemma_id,quantity,m,n,q,x,estimate,stderr,samples,slope,verdict,anchor"));
    assert!(rows.lines().count() > 20);
    let verdict: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("lem1a/verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["verdict"], "pass");
    assert!(dir.path().join("lem1a/plot.svg").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["command"], "verify");

    let report = run(&["report"], dir.path());
    assert_eq!(report.status.code(), Some(0));
    let summary = std::fs::read_to_string(dir.path().join("summary.md")).unwrap();
    assert!(summary.contains("lem1a"));
}

#[test]
fn verify_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut args = LEM1A.to_vec();
    args.extend(["--threads", "1"]);
    assert!(run(&args, a.path()).status.success());
    let mut args = LEM1A.to_vec();
    args.extend(["--threads", "2"]);
    assert!(run(&args, b.path()).status.success());
    for file in ["estimates.csv", "lem1a/estimates.csv", "lem1a/checks.csv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["verify"][..],
        &["verify", "--lemma", "nope"],
        &["verify", "--lemma", "lem1a", "--samples", "5"],
        &["verify", "--lemma", "th8", "--beta", "0.5"],
        &["solve", "--case", "heat"],
        &["integrate", "--form", "cubic"],
        &["frobnicate"],
    ] {
        let out = run(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(run(&["report"], empty.path()).status.code(), Some(2));
}

#[test]
fn config_file_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "lemma = \"le2\"\nsamples = 2000\nseed = 9\nm = \"4..8\"\n").unwrap();
    let out = run(&["verify", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert!(out.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("o/le2/estimates.csv").is_file());
    std::fs::write(&cfg, "unknown_key = 1\n").unwrap();
    let out = run(&["verify", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_solve_integrate() {
    let dir = tempfile::tempdir().unwrap();
    let sim = run(&["simulate", "--dim", "2", "--resolution", "6", "--seed", "3"], dir.path());
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let path = std::fs::read_to_string(dir.path().join("path.csv")).unwrap();
    assert_eq!(path.lines().count(), 1 + 65);
    assert!(path.starts_with("t,x1,x2"));

    let solve = run(&["solve", "--case", "exp_scalar", "--resolution", "8", "--m", "2..6"], dir.path());
    assert!(solve.status.success(), "{}", String::from_utf8_lossy(&solve.stderr));
    let wz = std::fs::read_to_string(dir.path().join("wz.csv")).unwrap();
    assert!(wz.starts_with("m,dp_gap,sup_gap,endpoint_error,max_rk_diagnostic"));
    // one gap row per consecutive pair of solved levels
    assert_eq!(wz.lines().count(), 1 + 4);

    let int = run(&["integrate", "--form", "linear", "--dim", "2", "--resolution", "6"], dir.path());
    assert!(int.status.success(), "{}", String::from_utf8_lossy(&int.stderr));
    assert!(dir.path().join("integral.csv").is_file());
}
