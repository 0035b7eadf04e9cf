use std::process::Command;

use fiberdd::cli::{read_records, RunStatus, CSV_HEADER};

fn fiberdd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fiberdd"))
}

fn run_ok(args: &[&str]) -> String {
    let out = fiberdd().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn bell_amplitudes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bell.qc");
    std::fs::write(&path, "qubits 2\nh 0\ncnot 0 1\n").unwrap();
    let text = run_ok(&["simulate", path.to_str().unwrap(), "--strategy", "sequential", "--amplitudes", "4"]);
    let lines: Vec<_> = text.lines().filter(|l| l.starts_with('|')).collect();
    assert_eq!(lines.len(), 2, "{text}");
    for (l, state) in lines.iter().zip(["|00>", "|11>"]) {
        assert!(l.starts_with(state) && l.ends_with("p=0.500000"), "{l}");
    }
}

#[test]
fn usage_errors_exit_nonzero() {
    let out = fiberdd().args(["simulate", "x.qc", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = fiberdd().args(["bench-grover", "--strategy", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = fiberdd().args(["bench-grover", "--unique", "worker", "--n", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn parse_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.qc");
    std::fs::write(&path, "qubits 2\nfoo 0\n").unwrap();
    let out = fiberdd().args(["simulate", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn simulate_reports_oom_and_timeout_distinctly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.qc");
    let c = fiberdd::random_circuit(14, 300, 2).unwrap();
    std::fs::write(&path, fiberdd::serialize_circuit(&c)).unwrap();
    let p = path.to_str().unwrap();
    let out = fiberdd().args(["simulate", p, "--max-nodes", "200"]).output().unwrap();
    assert_eq!(out.status.code(), Some(fiberdd::cli::EXIT_OOM));
    assert!(String::from_utf8_lossy(&out.stderr).contains("OOM"));
    let out = fiberdd().args(["simulate", p, "--timeout", "0.000001"]).output().unwrap();
    assert_eq!(out.status.code(), Some(fiberdd::cli::EXIT_TIMEOUT));
    assert!(String::from_utf8_lossy(&out.stderr).contains("TIMEOUT"));
}

#[test]
fn grover_sweep_rows() {
    let text = run_ok(&["bench-grover", "--n", "3..5", "--strategy", "sequential,inner-fibers", "--workers", "2", "--reps", "2"]);
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let rows = read_records(&text).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 2);
    for r in &rows {
        assert_eq!(r.status, RunStatus::Ok);
        // sin²((2k+1)θ) with sin θ = 2^(−n/2)
        let theta = (0.5f64.powf(r.n as f64 / 2.0)).asin();
        let k = fiberdd::grover_iterations(r.n) as f64;
        let want = ((2.0 * k + 1.0) * theta).sin().powi(2);
        assert!((r.success_p.unwrap() - want).abs() <= 1e-9, "{r:?} vs {want}");
    }
}

#[test]
fn failed_runs_do_not_stop_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let out = fiberdd()
        .args(["bench-random", "--n", "4..14", "--depth", "300", "--strategy", "sequential"])
        .args(["--max-nodes", "20000", "--reps", "2", "--csv", csv.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let rows = read_records(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert!(rows.iter().any(|r| r.status == RunStatus::Oom));
    assert!(rows.iter().any(|r| r.status == RunStatus::Ok));
    // every n appears, failures included
    let ns: std::collections::BTreeSet<_> = rows.iter().map(|r| r.n).collect();
    assert_eq!(ns.len(), 11);
    assert!(rows.iter().all(|r| r.success_p.is_none()));
}

#[test]
fn same_seed_same_circuit_columns() {
    let text = run_ok(&["bench-random", "--n", "5", "--depth", "40", "--strategy", "sequential,outer-reduce,inner-threads", "--workers", "2", "--reps", "1", "--seed", "9"]);
    let rows = read_records(&text).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!((r.benchmark.as_str(), r.n, r.depth, r.seed), ("random", 5, 40, 9));
    }
}

#[test]
fn experiments_emit_their_comparisons() {
    let rows = read_records(&run_ok(&["experiment", "unique-table", "--n", "8", "--depth", "40", "--workers", "2", "--reps", "1"])).unwrap();
    let uniques: Vec<_> = rows.iter().map(|r| r.unique.as_str()).collect();
    assert_eq!(uniques, ["global", "worker"]);

    let rows = read_records(&run_ok(&["experiment", "cache-scope", "--n", "6", "--workers", "2", "--reps", "1"])).unwrap();
    let caches: Vec<_> = rows.iter().map(|r| r.cache.as_str()).collect();
    assert_eq!(caches, ["local", "global"]);

    let rows = read_records(&run_ok(&["experiment", "processing-order", "--n", "6", "--reps", "2"])).unwrap();
    let names: Vec<_> = rows.iter().map(|r| r.benchmark.as_str()).collect();
    assert_eq!(names, ["grover-sequential-order", "grover-sequential-order", "grover-random-order", "grover-random-order"]);
    let p = rows[0].success_p.unwrap();
    assert!(rows.iter().all(|r| (r.success_p.unwrap() - p).abs() <= 1e-9));
}
