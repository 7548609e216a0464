use std::path::PathBuf;
use std::process::{Command, Output};

fn naca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_naca"))
        .args(args)
        .output()
        .expect("spawn naca")
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn run_passes_and_writes_identical_audits() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = naca(&[
            "run",
            &scenario("reproducibility.json"),
            "--audit",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    }
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn run_reports_failed_checks() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"name": "bad", "topology": "fixture:line3", "apps": {},
            "events": [{"type": "expect", "check": "flow_count", "count": 3}]}"#,
    )
    .unwrap();
    let o = naca(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn run_rejects_missing_file() {
    let o = naca(&["run", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_json_report() {
    let o = naca(&["run", &scenario("flow_install_rejected.json"), "--json", "--seed", "9"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["verdicts"][0][1], "reject_mask_resource");
}

#[test]
fn adversary_small_campaign() {
    let o = naca(&["adversary", "--runs", "20", "--seed", "3"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["runs"], 20);
    assert_eq!(v["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    // Exit status depends on timing, so only the output shape is checked.
    let o = naca(&[
        "bench",
        "--mode",
        "compile",
        "--runs",
        "2",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.code().is_some_and(|c| c <= 1));
    let text = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("mode,runs,variant"));
    assert!(lines[1].starts_with("compile,2,without,"));
    assert!(lines[2].starts_with("compile,2,with,"));
}

#[test]
fn bench_rejects_unknown_mode() {
    let o = naca(&["bench", "--mode", "stress"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown bench mode"));
}
