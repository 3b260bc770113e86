//! Drives the `ttriem` binary end to end.

use std::process::{Command, Output};

fn ttriem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttriem")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn check_reports_and_exits_zero_on_success() {
    let out = ttriem(&["check", "--filter", "stop-gradient"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("PASS stop-gradient"));
    assert!(text.contains("1 passed, 0 failed"));
}

#[test]
fn invariants_suite_runs_alone() {
    let out = ttriem(&["check", "--filter", "invariants"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("PASS")).count(), 1);
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let out = ttriem(&["check", "--filter", "no-such-suite"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_writes_the_csv_header_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("qf.csv");
    let out = ttriem(&[
        "bench", "--function", "qf", "--method", "naive", "--op", "grad", "--d", "3", "--n", "3", "--rx", "2",
        "--rz", "2", "--ra", "2", "--trials", "2", "--seed", "4", "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "function,method,op,d,n,rx,rz,ra,seconds_mean,seconds_std,residual_vs_ad");
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&cells[..8], &["qf", "naive", "grad", "3", "3", "2", "2", "2"]);
    assert!(cells[10].parse::<f64>().unwrap() < 1e-8);
}

#[test]
fn unavailable_method_is_a_dash_row_not_a_crash() {
    let out = ttriem(&["bench", "--function", "gram", "--method", "optimized", "--op", "hvp", "--trials", "1"]);
    assert!(out.status.success());
    assert!(stdout(&out).lines().nth(1).unwrap().ends_with(",-,-,-"));
}

#[test]
fn bench_rejects_unknown_function() {
    let out = ttriem(&["bench", "--function", "cubic", "--method", "ad", "--op", "grad"]);
    assert!(!out.status.success());
}

#[test]
fn demo_reads_a_starting_point() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x0.ttv1");
    let x0 = ttriem::checks::Demo::Complete.default_start().unwrap();
    ttriem::io::tt_write(&x0, &path).unwrap();
    let out = ttriem(&["demo", "complete", "--steps", "60", "--step-size", "0.25", "--in", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 61);
    assert!(text.contains("below 1e-6 at step"));
}

#[test]
fn demo_with_mismatched_start_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x0.ttv1");
    ttriem::io::tt_write(&ttriem::TtTensor::ones(&[2, 2]), &path).unwrap();
    let out = ttriem(&["demo", "solve", "--in", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("modes"));
}
