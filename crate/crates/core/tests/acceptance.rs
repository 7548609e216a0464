//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use naca_core::controller::{step_state, IntentEvent, IntentState, TransitionError};
use naca_core::harness::{
    adversary_suite, bench, parse_scenario, run_file, tag_integrity, to_csv, BenchMode, Event, ScenarioReport,
};
use naca_core::monitor::Decision;
use naca_core::policy::{build_operator_policy_set, classify_mapping, detect_conflicts};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use common::*;

const SEED: u64 = 0x5EED;
const ADVERSARY_RUNS: usize = 1000;
const ADVERSARY_BUDGET: Duration = Duration::from_secs(60);
const FLIP_TRIALS: usize = 100;
const MASK_INSTANCES: u64 = 500;
const BENCH_RUNS: usize = 40;
const BENCH_BUDGET: Duration = Duration::from_secs(120);
const MAX_OVERHEAD_PCT: f64 = 100.0;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

/// Runs a golden scenario and requires every embedded check to pass.
fn golden(name: &str) -> ScenarioReport {
    let report = run_file(&scenario_path(name), None).unwrap_or_else(|e| panic!("{name}: {e}"));
    let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).collect();
    assert!(failed.is_empty(), "{name}: {failed:?}");
    report
}

/// Requires that the scenario file still carries the pinned expectations, so
/// the golden files cannot drift away from the values asserted here.
fn pins(name: &str, expected: &[Value]) {
    let doc = std::fs::read_to_string(scenario_path(name)).unwrap();
    let sc = parse_scenario(&doc).unwrap();
    let present: Vec<Value> = sc
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Expect(c) => Some(serde_json::to_value(c).unwrap()),
            _ => None,
        })
        .collect();
    for want in expected {
        assert!(present.contains(want), "{name}: missing expectation {want}");
    }
}

fn verdicts(pairs: &[(&str, Decision)]) -> Vec<(String, Decision)> {
    pairs.iter().map(|(r, d)| (r.to_string(), *d)).collect()
}

fn soundness() -> String {
    let start = Instant::now();
    let s = adversary_suite(SEED, ADVERSARY_RUNS);
    let took = start.elapsed();
    assert_eq!(s.runs, ADVERSARY_RUNS);
    assert!(
        s.violations.is_empty(),
        "{} violations, first: {}",
        s.violations.len(),
        s.violations[0]
    );
    assert_eq!(s.tamper_accepted, 0, "tampered artefacts accepted");
    assert!(
        s.faults_injected > 0 && s.tamper_attempts > 0 && s.executed_queries > 0,
        "campaign exercised nothing: {s:?}"
    );
    assert!(took < ADVERSARY_BUDGET, "took {took:?}");
    format!(
        "{} runs, {} requests, {} faults, {} tamper attempts, {} executed queries, 0 violations in {:.2?}",
        s.runs, s.requests, s.faults_injected, s.tamper_attempts, s.executed_queries, took
    )
}

fn flow_install() -> String {
    let r = golden("flow_install_rejected.json");
    assert_eq!(r.verdicts, verdicts(&[("viewer/1", Decision::RejectMaskResource)]));
    "flow_install under the operator mask rejected with reject_mask_resource".into()
}

fn jurisdiction() -> String {
    pins(
        "jurisdiction_filter.json",
        &[
            json!({"check": "verdict", "request_id": "viewer/1", "decision": "accept"}),
            json!({"check": "ltps", "request_id": "viewer/1", "node": "s1", "ltps": ["p1", "p2", "h"]}),
            json!({"check": "verdict", "request_id": "viewer/2", "decision": "reject_mask_attribute"}),
            json!({"check": "topology", "request_id": "viewer/3",
                "nodes": ["s1", "s2", "s3"],
                "links": ["s1/p1-s2/p1", "s1/p2-s3/p2", "s2/p2-s3/p1"]}),
        ],
    );
    let r = golden("jurisdiction_filter.json");
    assert_eq!(
        r.verdicts,
        verdicts(&[
            ("viewer/1", Decision::Accept),
            ("viewer/2", Decision::RejectMaskAttribute),
            ("viewer/3", Decision::Accept)
        ])
    );
    "region-A node accepted, region-B node rejected, topology limited to {s1,s2,s3}".into()
}

fn window() -> String {
    use Decision::*;
    let cases: [(&str, Vec<(String, Decision)>); 3] = [
        ("window_reorder.json", verdicts(&[("a/1", Accept), ("a/2", Accept)])),
        (
            "window_gap.json",
            verdicts(&[
                ("a/2", RejectWindow),
                ("a/3", RejectWindow),
                ("a/4", RejectWindow),
                ("a/1", RejectWindow),
            ]),
        ),
        (
            "window_cross_app.json",
            verdicts(&[("b/2", RejectWindow), ("a/1", RejectWindow)]),
        ),
    ];
    for (name, want) in cases {
        let r = golden(name);
        assert_eq!(r.verdicts, want, "{name}");
    }
    "reorder within W=2 restored, gap beyond W and cross-app reorder invalidated".into()
}

fn integrity() -> String {
    let r = tag_integrity(SEED, FLIP_TRIALS);
    assert_eq!(r.trials, FLIP_TRIALS);
    assert_eq!(r.false_accepts, 0, "{r:?}");
    assert_eq!(r.rejected, FLIP_TRIALS, "{r:?}");
    assert!(r.replay_rejected, "replayed record accepted");
    format!(
        "{}/{} flips rejected over fields {:?}, replay rejected",
        r.rejected, r.trials, r.field_counts
    )
}

fn mask_algebra() -> String {
    let mut apps_seen = 0;
    let mut pairs_seen = 0;
    for seed in 0..MASK_INSTANCES {
        let apps = random_instance(&mut ChaCha20Rng::seed_from_u64(SEED ^ seed));
        apps_seen += apps.len();
        let masks: Vec<_> = apps.iter().map(build_mask).collect();
        for (app, mask) in apps.iter().zip(&masks) {
            let op_rules = oracle_policy_set(&app.rules, &app.manifest);
            assert_eq!(
                mask_shape(mask),
                oracle_mask(&op_rules, &app.manifest),
                "instance {seed}: mask"
            );
            let op = build_operator_policy_set(&app.rules, &app.manifest);
            assert_eq!(
                classify_mapping(&op, &app.manifest).unwrap(),
                oracle_mapping(&op_rules, &app.manifest),
                "instance {seed}: mapping"
            );
        }
        for (i, candidate) in masks.iter().enumerate() {
            let installed: BTreeMap<String, _> = masks
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, m)| (m.app_id().to_string(), m.clone()))
                .collect();
            let got: BTreeSet<_> = detect_conflicts(candidate, &installed)
                .pairs
                .into_iter()
                .map(|p| (p.app_b, p.resource.as_str().to_string(), p.shared_values))
                .collect();
            let want = oracle_conflicts(candidate, &installed);
            pairs_seen += want.len();
            assert_eq!(got, want, "instance {seed}: conflicts");
        }
    }
    format!("{MASK_INSTANCES} instances ({apps_seen} apps, {pairs_seen} conflicts), 0 mismatches")
}

fn delegation() -> String {
    pins(
        "delegation.json",
        &[
            json!({"check": "revoked", "apps": ["A", "B", "C"]}),
            json!({"check": "accepted_queries", "app": "B", "count": 1}),
        ],
    );
    let r = golden("delegation.json");
    // Exactly one accepted query per app, all issued before the termination.
    let accepted: BTreeMap<String, usize> =
        r.verdicts
            .iter()
            .filter(|(_, d)| *d == Decision::Accept)
            .fold(BTreeMap::new(), |mut m, (id, _)| {
                *m.entry(id.split('/').next().unwrap().to_string()).or_default() += 1;
                m
            });
    assert_eq!(
        accepted,
        BTreeMap::from([("A".into(), 1), ("B".into(), 1), ("C".into(), 1)])
    );
    "terminating A revoked {A,B,C}; no query accepted afterwards".into()
}

fn state_machine() -> String {
    let mut legal = 0;
    for s in IntentState::ALL {
        for e in IntentEvent::ALL {
            let want = ADJACENCY
                .iter()
                .find(|(f, ev, _)| *f == s && *ev == e)
                .map(|t| t.2)
                .or((s == IntentState::Withdrawing && e == IntentEvent::WithdrawCompleted)
                    .then_some(IntentState::Withdrawn));
            match (step_state(s, e), want) {
                (Ok(got), Some(want)) => {
                    assert_eq!(got, want, "{s:?} x {e:?}");
                    legal += 1;
                }
                (Err(TransitionError::Illegal { .. }), None) => {}
                (got, want) => panic!("{s:?} x {e:?}: got {got:?}, want {want:?}"),
            }
        }
    }
    assert_eq!(IntentEvent::RefMonitorRejected.number(), Some(16));
    assert_eq!(
        step_state(IntentState::RefMonitor, IntentEvent::RefMonitorRejected).unwrap(),
        IntentState::Failed
    );
    format!(
        "{} pairs checked, {legal} legal",
        IntentState::ALL.len() * IntentEvent::ALL.len()
    )
}

fn overhead() -> String {
    let start = Instant::now();
    let reports: Vec<_> = BenchMode::ALL.iter().map(|m| bench(*m, BENCH_RUNS)).collect();
    let took = start.elapsed();

    let file = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(file.path(), to_csv(&reports)).unwrap();
    let csv = std::fs::read_to_string(file.path()).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let mut means: BTreeMap<(String, String), f64> = BTreeMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[col("runs")], BENCH_RUNS.to_string());
        means.insert(
            (f[col("mode")].to_string(), f[col("variant")].to_string()),
            f[col("mean_s")].parse().unwrap(),
        );
    }

    let mut out = Vec::new();
    let mut over = Vec::new();
    for m in BenchMode::ALL {
        let mode = m.as_str().to_string();
        let without = means[&(mode.clone(), "without".to_string())];
        let with = means[&(mode.clone(), "with".to_string())];
        let pct = (with - without) / without * 100.0;
        if pct >= MAX_OVERHEAD_PCT {
            over.push(mode.clone());
        }
        out.push(format!("{mode} {pct:.1}%"));
    }
    let detail = format!("{} in {:.1?}", out.join(", "), took);
    assert!(
        over.is_empty(),
        "mean overhead at or above {MAX_OVERHEAD_PCT}%: {detail}"
    );
    assert!(took < BENCH_BUDGET, "{detail}");
    detail
}

fn reproducibility() -> String {
    let a = run_file(&scenario_path("reproducibility.json"), None).unwrap();
    let b = run_file(&scenario_path("reproducibility.json"), None).unwrap();
    assert!(a.passed(), "{:?}", a.checks);
    assert!(!a.audit_jsonl.is_empty());
    assert_eq!(a.audit_jsonl.as_bytes(), b.audit_jsonl.as_bytes());
    format!(
        "{} audit lines, byte-identical across two runs",
        a.audit_jsonl.lines().count()
    )
}

type Criterion = (&'static str, fn() -> String);

fn main() {
    let criteria: [Criterion; 10] = [
        ("monitor soundness", soundness),
        ("flow install rejection", flow_install),
        ("jurisdiction filtering", jurisdiction),
        ("sliding window", window),
        ("tag integrity", integrity),
        ("mask algebra oracles", mask_algebra),
        ("delegation revocation", delegation),
        ("state machine conformance", state_machine),
        ("performance overhead", overhead),
        ("reproducibility", reproducibility),
    ];
    // Keep assertion messages on our own lines instead of the default hook's.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match catch_unwind(AssertUnwindSafe(f)) {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL criterion {} ({name}): {msg}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
