//! Latency comparison of the enforced pipeline against bare compilation
//! and NIB execution on a generated grid.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::controller::{compile, Intent};
use crate::mano::MitigationPolicy;
use crate::nib::{load_topology, Nib, NibSnapshot, Scope};
use crate::pipeline::{Pipeline, PipelineConfig, RequestOutcome};
use crate::policy::{AccessMask, AccessModel, ModelVariant};

pub const GRID_SIDE: usize = 10;
/// Connectivity intents issued per timed run.
pub const INTENTS_PER_RUN: usize = 8;
const APP: &str = "bench";
const MANIFEST: &str = r#"{"app_id": "bench", "entries": [
    {"resource": "dataplane-topology", "actions": ["read"]},
    {"resource": "flow", "actions": ["modify"]},
    {"resource": "stats", "actions": ["stat"]}]}"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Compile,
    Submit,
    SubmitWithdraw,
}

#[derive(Debug, Error)]
#[error("unknown bench mode {0:?} (expected compile, submit or submit-withdraw)")]
pub struct UnknownMode(String);

impl FromStr for BenchMode {
    type Err = UnknownMode;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "compile" => Ok(Self::Compile),
            "submit" => Ok(Self::Submit),
            "submit-withdraw" | "submit_withdraw" => Ok(Self::SubmitWithdraw),
            _ => Err(UnknownMode(s.to_string())),
        }
    }
}

impl BenchMode {
    pub const ALL: [BenchMode; 3] = [BenchMode::Compile, BenchMode::Submit, BenchMode::SubmitWithdraw];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Compile => "compile",
            BenchMode::Submit => "submit",
            BenchMode::SubmitWithdraw => "submit-withdraw",
        }
    }
}

/// Square grid; the left half sits in region-A, the right in region-B,
/// border switches are edge. Hosts hang off the four corners.
pub fn grid_topology(side: usize) -> NibSnapshot {
    let name = |r: usize, c: usize| format!("g{r:02}{c:02}");
    let mut nodes = Vec::new();
    let mut links = Vec::new();
    for r in 0..side {
        for c in 0..side {
            let border = r == 0 || c == 0 || r + 1 == side || c + 1 == side;
            nodes.push(serde_json::json!({
                "id": name(r, c),
                "jurisdiction": if c < side / 2 { "region-A" } else { "region-B" },
                "placement": if border { "edge" } else { "core" },
                "ltps": ["n", "s", "e", "w", "h"],
            }));
            if c + 1 < side {
                links.push(serde_json::json!([[name(r, c), "e"], [name(r, c + 1), "w"]]));
            }
            if r + 1 < side {
                links.push(serde_json::json!([[name(r, c), "s"], [name(r + 1, c), "n"]]));
            }
        }
    }
    let last = side - 1;
    let hosts: Vec<_> = [("ha", 0, 0), ("hb", last, last), ("hc", 0, last), ("hd", last, 0)]
        .into_iter()
        .enumerate()
        .map(|(i, (h, r, c))| serde_json::json!({"id": h, "ip": format!("10.9.0.{}", i + 1), "attach": [name(r, c), "h"]}))
        .collect();
    let doc = serde_json::json!({"nodes": nodes, "links": links, "hosts": hosts});
    load_topology(&doc.to_string()).expect("generated grid is well formed")
}

fn intents() -> Vec<Intent> {
    let pairs = [("ha", "hb"), ("hc", "hd"), ("hb", "ha"), ("hd", "hc")];
    (0..INTENTS_PER_RUN)
        .map(|i| {
            let (s, d) = pairs[i % pairs.len()];
            Intent::connectivity(s, d, "udp", 1000 + i as u16, 2000)
        })
        .collect()
}

/// Untimed setup for one run of either variant.
pub struct Prepared {
    mode: BenchMode,
    intents: Vec<Intent>,
    kind: Variant,
}

// Built once per timed run and consumed by it.
#[allow(clippy::large_enum_variant)]
enum Variant {
    Bare { nib: Nib, mask: AccessMask },
    Enforced(Box<Pipeline>),
}

fn enforced_pipeline(topo: NibSnapshot) -> Pipeline {
    let mut p = Pipeline::new(
        topo,
        PipelineConfig {
            seed: 7,
            mitigation: MitigationPolicy::LogOnly,
            ..PipelineConfig::default()
        },
    );
    p.enroll(MANIFEST, AccessModel::of(ModelVariant::CommonsUncontrolled), &[])
        .expect("bench app enrolls");
    p
}

impl Prepared {
    pub fn new(mode: BenchMode, enforced: bool, topo: &NibSnapshot) -> Self {
        let kind = if enforced {
            Variant::Enforced(Box::new(enforced_pipeline(topo.clone())))
        } else {
            // Same mask, used only to steer path selection like the controller does.
            let p = enforced_pipeline(topo.clone());
            let mask = p.mano.app(APP).expect("enrolled").mask.clone();
            Variant::Bare {
                nib: Nib::new(topo.clone(), p.keys().k_nib.clone()),
                mask,
            }
        };
        Self {
            mode,
            intents: intents(),
            kind,
        }
    }

    /// The timed part. Returns the number of queries that took effect.
    pub fn run(self) -> usize {
        match self.kind {
            Variant::Bare { mut nib, mask } => run_bare(self.mode, &self.intents, &mut nib, &mask),
            Variant::Enforced(mut p) => run_enforced(self.mode, &self.intents, &mut p),
        }
    }
}

fn run_bare(mode: BenchMode, intents: &[Intent], nib: &mut Nib, mask: &AccessMask) -> usize {
    let mut done = 0;
    let mut rids = Vec::new();
    for (i, intent) in intents.iter().enumerate() {
        let rid = format!("{APP}/{}", i + 1);
        let queries = compile(APP, &rid, intent, mask, nib.view()).expect("grid path exists");
        if mode == BenchMode::Compile {
            done += queries.len();
            continue;
        }
        for q in &queries {
            done += usize::from(nib.dispatch(q, &Scope::default()).is_ok());
        }
        rids.push(rid);
    }
    if mode == BenchMode::SubmitWithdraw {
        for (i, target) in rids.iter().enumerate() {
            let rid = format!("{APP}/w{i}");
            let queries = compile(APP, &rid, &Intent::withdraw(target), mask, nib.view()).expect("withdraw compiles");
            for q in &queries {
                done += usize::from(nib.dispatch(q, &Scope::default()).is_ok());
            }
        }
    }
    done
}

fn run_enforced(mode: BenchMode, intents: &[Intent], p: &mut Pipeline) -> usize {
    let mut done = 0;
    let mut rids = Vec::new();
    for intent in intents {
        let req = p.request_for(APP, intent.clone());
        if mode == BenchMode::Compile {
            // Tag, compile and verify; nothing is executed on the NIB.
            let (record, fwd) = p.tag(req).expect("bench request tags");
            p.deliver_tag(record);
            p.submit(fwd);
            for b in p.emit() {
                let releases = p.monitor.verify_batch(&b, p.nib.view());
                done += releases.iter().map(|r| r.sealed.len()).sum::<usize>();
            }
            continue;
        }
        let before = p.nib.executed().len();
        if let RequestOutcome::Tagged { record, .. } = p.request(req) {
            rids.push(record.request_id);
        }
        done += p.nib.executed().len() - before;
    }
    if mode == BenchMode::SubmitWithdraw {
        for rid in rids {
            let before = p.nib.executed().len();
            let req = p.request_for(APP, Intent::withdraw(&rid));
            p.request(req);
            done += p.nib.executed().len() - before;
        }
    }
    done
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
}

impl Stats {
    pub fn of(samples: &[f64]) -> Self {
        assert!(!samples.is_empty(), "no samples");
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let mean = s.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        };
        let var = if n > 1 {
            s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            min: s[0],
            max: s[n - 1],
            mean,
            median,
            stddev: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub runs: usize,
    pub without: Stats,
    pub with: Stats,
    /// Mean latency increase of the enforced path, in percent.
    pub overhead_pct: f64,
}

pub const CSV_HEADER: &str = "mode,runs,variant,min_s,max_s,mean_s,median_s,stddev_s,overhead_pct";

impl BenchReport {
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (variant, s, ovh) in [
            ("without", &self.without, String::new()),
            ("with", &self.with, format!("{:.2}", self.overhead_pct)),
        ] {
            let _ = writeln!(
                out,
                "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{}",
                self.mode.as_str(),
                self.runs,
                variant,
                s.min,
                s.max,
                s.mean,
                s.median,
                s.stddev,
                ovh
            );
        }
        out
    }
}

pub fn to_csv(reports: &[BenchReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}

fn time_once(mode: BenchMode, enforced: bool, topo: &NibSnapshot) -> f64 {
    let prepared = Prepared::new(mode, enforced, topo);
    let start = Instant::now();
    let done = prepared.run();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(done > 0, "bench run did nothing");
    elapsed
}

/// Runs both variants `runs` times each, interleaved, after two warm-up
/// rounds.
pub fn bench(mode: BenchMode, runs: usize) -> BenchReport {
    assert!(runs > 0, "runs must be positive");
    let topo = grid_topology(GRID_SIDE);
    for _ in 0..2 {
        time_once(mode, false, &topo);
        time_once(mode, true, &topo);
    }
    let mut without = Vec::with_capacity(runs);
    let mut with = Vec::with_capacity(runs);
    for i in 0..runs {
        // Alternate which variant goes first to cancel drift.
        if i % 2 == 0 {
            without.push(time_once(mode, false, &topo));
            with.push(time_once(mode, true, &topo));
        } else {
            with.push(time_once(mode, true, &topo));
            without.push(time_once(mode, false, &topo));
        }
    }
    let without = Stats::of(&without);
    let with = Stats::of(&with);
    let overhead_pct = (with.mean - without.mean) / without.mean * 100.0;
    BenchReport {
        mode,
        runs,
        without,
        with,
        overhead_pct,
    }
}
