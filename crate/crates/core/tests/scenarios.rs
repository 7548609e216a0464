use std::path::PathBuf;

use naca_core::harness::run_file;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn assert_passes(name: &str) {
    let report = run_file(&scenario(name), None).unwrap();
    let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).collect();
    assert!(failed.is_empty(), "{name}: {failed:#?}");
    assert!(!report.checks.is_empty());
}

#[test]
fn flow_install_rejected() {
    assert_passes("flow_install_rejected.json");
}

#[test]
fn jurisdiction_filter() {
    assert_passes("jurisdiction_filter.json");
}

#[test]
fn window_reorder() {
    assert_passes("window_reorder.json");
}

#[test]
fn window_gap() {
    assert_passes("window_gap.json");
}

#[test]
fn window_cross_app() {
    assert_passes("window_cross_app.json");
}

#[test]
fn delegation() {
    assert_passes("delegation.json");
}

#[test]
fn mixed_workload() {
    assert_passes("reproducibility.json");
}

#[test]
fn seed_override_changes_audit_but_not_outcome() {
    let a = run_file(&scenario("reproducibility.json"), Some(1)).unwrap();
    let b = run_file(&scenario("reproducibility.json"), Some(2)).unwrap();
    assert!(a.passed() && b.passed());
    assert_ne!(a.audit_jsonl, b.audit_jsonl);
}

#[test]
fn manifest_must_match_app_key() {
    let doc = r#"{"name": "x", "topology": "fixture:line3",
        "apps": {"a": {"manifest": "{\"app_id\": \"b\", \"entries\": []}", "model": {"variant": "commons_uncontrolled"}}},
        "events": []}"#;
    let sc = naca_core::harness::parse_scenario(doc).unwrap();
    assert!(naca_core::harness::run(&sc, std::path::Path::new("."), None).is_err());
}

#[test]
fn unknown_event_field_rejected() {
    let doc = r#"{"name": "x", "topology": "fixture:line3", "apps": {},
        "events": [{"type": "flush", "extra": 1}]}"#;
    assert!(naca_core::harness::parse_scenario(doc).is_err());
}

fn with_keys(k: &str) -> String {
    format!(
        r#"{{"name": "keys", "topology": "fixture:line3", "keys": {{"k": "{k}", "k_nib": "{}"}},
        "apps": {{"a": {{"manifest": "{{\"app_id\": \"a\", \"entries\": [{{\"resource\": \"dataplane-topology\", \"actions\": [\"read\"]}}]}}",
            "model": {{"variant": "commons_uncontrolled"}}}}}},
        "events": [{{"type": "enroll", "app": "a"}},
            {{"type": "request", "app": "a", "intent": {{"kind": {{"type": "topology_read"}}}}}},
            {{"type": "expect", "check": "accepted_queries", "app": "a", "count": 1}}]}}"#,
        "22".repeat(32)
    )
}

#[test]
fn configured_keys() {
    let base = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let sc = naca_core::harness::parse_scenario(&with_keys(&"11".repeat(32))).unwrap();
    assert!(naca_core::harness::run(&sc, &base, None).unwrap().passed());
    for bad in ["11".repeat(31), "zz".repeat(32)] {
        let sc = naca_core::harness::parse_scenario(&with_keys(&bad)).unwrap();
        assert!(matches!(
            naca_core::harness::run(&sc, &base, None),
            Err(naca_core::harness::ScenarioError::Schema(_))
        ));
    }
}
