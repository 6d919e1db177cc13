use std::process::Command;

use holoquant::verification::from_json;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_holoquant"))
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let out = bin().args(["verify", "--suite", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_of_range_dimension_is_a_usage_error() {
    let out = bin().args(["verify", "--suite", "tessarine", "--dim", "40"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tessarine_suite_writes_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = bin()
        .args(["verify", "--suite", "tessarine", "--dim", "2,3,4", "--seed", "7", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(report.pass);
    assert_eq!(report.config.seed, 7);
    assert!(!report.cases.is_empty());
}

#[test]
fn hyperkahler_suite_reports_failure() {
    let out = bin().args(["verify", "--suite", "hyperkahler"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let report = from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let failed: Vec<_> = report.failed().map(|c| c.name.clone()).collect();
    assert_eq!(failed, vec!["J' = J at Hermitian q".to_string()]);
}

#[test]
fn csv_summary_has_header() {
    let out = bin().args(["verify", "--suite", "flat", "--format", "csv-summary"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("name,residual,bound,pass\n"));
}

#[test]
fn path_without_steps_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("path.csv");
    let out = bin().args(["path", "--geometry", "sphere_octant", "--out"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "m,error,phase,note\n");
}

#[test]
fn path_rows_follow_the_requested_steps() {
    let out = bin().args(["path", "--geometry", "unitary_flow", "--steps", "100,200"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("100,"));
    assert!(lines[2].starts_with("200,"));
}

#[test]
fn examples_print_small_residuals() {
    for geometry in ["flat", "sphere"] {
        let out = bin().args(["examples", geometry]).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("kernel"), "{text}");
    }
}
