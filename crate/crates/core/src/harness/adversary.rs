//! Randomized attack campaigns against the full pipeline, plus an oracle
//! that re-checks every query the NIB executed.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::authcode::Nonce;
use crate::controller::{Batch, Fault, Intent, IntentKind, Query, QueryOp, Target};
use crate::mano::MitigationPolicy;
use crate::monitor::Decision;
use crate::nib::{fixtures, load_topology, FlowMatch, NibSnapshot, QueryResult, SealedQuery};
use crate::pipeline::{Pipeline, PipelineConfig, RequestOutcome};
use crate::policy::{
    AccessModel, Action, Attribute, AttributeConstraint, ModelVariant, ResourceAccessRule, ResourceId,
};
use crate::tagger::TagRecord;

const RESOURCES: [&str; 4] = ["dataplane-topology", "flow", "stats", "device-config"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AdversarySummary {
    pub runs: usize,
    pub requests: usize,
    pub dropped_at_tagger: usize,
    /// Tagger drop reasons by error code.
    pub drops: BTreeMap<String, usize>,
    pub faults_injected: usize,
    pub tamper_attempts: usize,
    /// Tampered tag records, batches or sealed queries that were honoured.
    pub tamper_accepted: usize,
    pub verdicts: BTreeMap<String, usize>,
    pub executed_queries: usize,
    pub violations: Vec<String>,
}

/// The resource and action a query needs, transcribed independently of
/// the monitor's table.
fn oracle_needs(op: QueryOp) -> (&'static str, Action) {
    match op {
        QueryOp::TopoRead => ("dataplane-topology", Action::Read),
        QueryOp::NodeLtps => ("dataplane-topology", Action::Read),
        QueryOp::Subscribe => ("dataplane-topology", Action::Subscr),
        QueryOp::FlowInstall => ("flow", Action::ConfigMod),
        QueryOp::FlowDelete => ("flow", Action::ConfigMod),
        QueryOp::StatsRead => ("stats", Action::Stat),
        QueryOp::ConfigRead => ("device-config", Action::ConfigRead),
        QueryOp::ConfigMod => ("device-config", Action::ConfigMod),
    }
}

fn oracle_nodes(target: &Target, topo: &NibSnapshot) -> Option<Vec<String>> {
    match target {
        Target::Topology => Some(Vec::new()),
        Target::Node(n) | Target::Flow { node: n, .. } => topo.nodes.contains_key(n).then(|| vec![n.clone()]),
        Target::Link(id) => topo
            .links
            .iter()
            .find(|l| &l.id() == id)
            .map(|l| vec![l.a.node.clone(), l.b.node.clone()]),
        Target::FlowId(id) => {
            let node = id.split('|').next()?;
            topo.nodes.contains_key(node).then(|| vec![node.to_string()])
        }
    }
}

fn value_of<'a>(topo: &'a NibSnapshot, node: &str, attr: Attribute) -> &'a str {
    let info = &topo.nodes[node];
    match attr {
        Attribute::Jurisdiction => &info.jurisdiction,
        Attribute::Placement => &info.placement,
        _ => "",
    }
}

fn constraint_holds(c: &AttributeConstraint, nodes: &[String], class: &str, topo: &NibSnapshot) -> bool {
    match c.attribute {
        Attribute::Jurisdiction | Attribute::Placement => nodes
            .iter()
            .all(|n| c.values.iter().any(|v| v == value_of(topo, n, c.attribute))),
        Attribute::ModificationType => c.values.iter().any(|v| v == class),
        _ => true,
    }
}

/// Brute-force check of every executed NIB query against the mask bound to
/// its request by the tagger. `topo` is the topology before any query ran.
pub fn soundness_violations(p: &Pipeline, topo: &NibSnapshot) -> Vec<String> {
    let records: BTreeMap<&str, &TagRecord> = p.tagger.issued().iter().map(|r| (r.request_id.as_str(), r)).collect();
    let masks = p.mano.issued_masks();
    let mut out = Vec::new();
    for ex in p.nib.executed() {
        let q = &ex.query;
        let Some(rec) = records.get(q.request_id.as_str()) else {
            out.push(format!("{}: executed without a tag", q.request_id));
            continue;
        };
        if rec.app_id != q.app_id {
            out.push(format!(
                "{}: query for {} under tag of {}",
                q.request_id, q.app_id, rec.app_id
            ));
            continue;
        }
        let Some(mask) = masks.get(&rec.mask_digest).filter(|m| m.app_id() == rec.app_id) else {
            out.push(format!("{}: tag names no mask of {}", q.request_id, rec.app_id));
            continue;
        };
        let (resource, action) = oracle_needs(q.op);
        let class = if action == Action::ConfigMod { "modify" } else { "read" };
        let Some(nodes) = oracle_nodes(&q.target, topo) else {
            out.push(format!("{}: target {} unresolvable", q.request_id, q.target));
            continue;
        };
        let returned: Vec<String> = match &ex.result {
            Some(QueryResult::Topology { nodes, .. }) => nodes.clone(),
            _ => Vec::new(),
        };
        let permitted = mask.tuples().iter().any(|t| {
            t.resource.as_str() == resource
                && t.actions.contains(&action)
                && t.rules.iter().all(|r| {
                    r.constraints.iter().all(|c| {
                        constraint_holds(c, &nodes, class, topo) && constraint_holds(c, &returned, class, topo)
                    })
                })
        });
        if !permitted {
            out.push(format!(
                "{}: {} on {} violates mask",
                q.request_id,
                q.op.as_str(),
                q.target
            ));
        }
    }
    out
}

struct Campaign {
    rng: ChaCha20Rng,
    p: Pipeline,
    topo: NibSnapshot,
    apps: Vec<String>,
    request_ids: Vec<String>,
    summary: AdversarySummary,
}

fn random_rule(rng: &mut ChaCha20Rng, app: &str, resource: &str, n: usize) -> Option<ResourceAccessRule> {
    let mut constraints = Vec::new();
    if rng.gen_bool(0.5) {
        let regions: Vec<&str> = ["region-A", "region-B"]
            .into_iter()
            .filter(|_| rng.gen_bool(0.6))
            .collect();
        if !regions.is_empty() {
            constraints.push(AttributeConstraint::one_of(Attribute::Jurisdiction, regions));
        }
    }
    if rng.gen_bool(0.3) {
        let p = *["edge", "core"].choose(rng).expect("non-empty");
        constraints.push(AttributeConstraint::equals(Attribute::Placement, p));
    }
    if rng.gen_bool(0.2) {
        constraints.push(AttributeConstraint::equals(Attribute::ModificationType, "read"));
    }
    if rng.gen_bool(0.1) {
        constraints.push(AttributeConstraint::equals(Attribute::Time, "business-hours"));
    }
    let mut rule = ResourceAccessRule::new(
        format!("{app}-{resource}-{n}"),
        ResourceId::new(resource).ok()?,
        constraints,
    )
    .ok()?;
    if rng.gen_bool(0.2) {
        let keep: Vec<Action> = Action::ALL.into_iter().filter(|_| rng.gen_bool(0.5)).collect();
        rule = rule.with_actions(keep);
    }
    Some(rule)
}

fn random_flow(rng: &mut ChaCha20Rng) -> FlowMatch {
    FlowMatch::new(
        &format!("10.0.{}.{}", rng.gen_range(0..3), rng.gen_range(1..6)),
        &format!("10.0.{}.{}", rng.gen_range(0..3), rng.gen_range(1..6)),
        ["udp", "tcp"].choose(rng).expect("non-empty"),
        rng.gen_range(1..4),
        rng.gen_range(1..4),
    )
}

impl Campaign {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let doc = if rng.gen_bool(0.5) {
            fixtures::LINE_3
        } else {
            fixtures::TWO_REGION_MESH
        };
        let topo = load_topology(doc).expect("fixture loads");
        let mitigation = match rng.gen_range(0..4) {
            0 => MitigationPolicy::QuarantineOnMaskViolation,
            1 => MitigationPolicy::QuarantineAll,
            _ => MitigationPolicy::LogOnly,
        };
        let p = Pipeline::new(
            topo.clone(),
            PipelineConfig {
                seed,
                mitigation,
                ..PipelineConfig::default()
            },
        );
        Self {
            rng,
            p,
            topo,
            apps: Vec::new(),
            request_ids: Vec::new(),
            summary: AdversarySummary::default(),
        }
    }

    fn enroll_apps(&mut self) {
        let n = self.rng.gen_range(2..=4);
        for i in 0..n {
            let app = format!("app{i}");
            let mut entries = Vec::new();
            let mut rules = Vec::new();
            for res in RESOURCES {
                if !self.rng.gen_bool(0.6) {
                    continue;
                }
                let mut actions: Vec<&str> = Action::ALL
                    .iter()
                    .filter(|_| self.rng.gen_bool(0.5))
                    .map(|a| a.as_str())
                    .collect();
                if actions.is_empty() {
                    actions.push(Action::Read.as_str());
                }
                entries.push(serde_json::json!({"resource": res, "actions": actions}));
                for k in 0..self.rng.gen_range(0..=2) {
                    if let Some(rule) = random_rule(&mut self.rng, &app, res, k) {
                        rules.push(rule);
                    }
                }
            }
            let doc = serde_json::json!({"app_id": app, "entries": entries}).to_string();
            let variant = if self.rng.gen_bool(0.2) {
                ModelVariant::ExclusiveDynamic
            } else {
                ModelVariant::CommonsUncontrolled
            };
            if self.p.enroll(&doc, AccessModel::of(variant), &rules).is_ok() {
                self.apps.push(app);
            }
        }
    }

    fn pick_app(&mut self) -> String {
        if self.apps.is_empty() || self.rng.gen_bool(0.05) {
            return "intruder".to_string();
        }
        self.apps.choose(&mut self.rng).expect("non-empty").clone()
    }

    fn pick_node(&mut self) -> String {
        let mut nodes: Vec<String> = self.topo.nodes.keys().cloned().collect();
        nodes.push("s9".into());
        nodes.choose(&mut self.rng).expect("non-empty").clone()
    }

    fn random_target(&mut self) -> Target {
        match self.rng.gen_range(0..5) {
            0 => Target::Topology,
            1 => Target::Node(self.pick_node()),
            2 => {
                let links: Vec<String> = self.topo.links.iter().map(|l| l.id()).collect();
                Target::Link(links.choose(&mut self.rng).cloned().unwrap_or_default())
            }
            3 => Target::Flow {
                node: self.pick_node(),
                flow: random_flow(&mut self.rng),
            },
            _ => {
                let ids: Vec<String> = self.p.nib.view().flows.keys().cloned().collect();
                Target::FlowId(ids.choose(&mut self.rng).cloned().unwrap_or_else(|| "s1|bogus".into()))
            }
        }
    }

    fn random_intent(&mut self) -> Intent {
        let hosts: Vec<String> = self.topo.hosts.keys().cloned().chain(["h9".to_string()]).collect();
        let kind = match self.rng.gen_range(0..6) {
            0 => IntentKind::TopologyRead { filter: None },
            1 => IntentKind::NodeLtps {
                node_id: self.pick_node(),
            },
            2 => IntentKind::Connectivity {
                src_host: hosts.choose(&mut self.rng).expect("non-empty").clone(),
                dst_host: hosts.choose(&mut self.rng).expect("non-empty").clone(),
                protocol: "udp".into(),
                src_port: self.rng.gen_range(1..4),
                dst_port: self.rng.gen_range(1..4),
            },
            3 => IntentKind::FlowInstall {
                node: self.pick_node(),
                flow: random_flow(&mut self.rng),
            },
            4 => {
                let ids: Vec<String> = self.p.nib.view().flows.keys().cloned().collect();
                IntentKind::StatsRead {
                    flow_id: ids.choose(&mut self.rng).cloned().unwrap_or_else(|| "s1|none".into()),
                }
            }
            _ => IntentKind::Withdraw {
                request_id: self.request_ids.choose(&mut self.rng).cloned().unwrap_or_default(),
            },
        };
        Intent::new(kind)
    }

    fn random_query(&mut self) -> Query {
        let op = *QueryOp::ALL.choose(&mut self.rng).expect("non-empty");
        let target = self.random_target();
        let (app, rid) = if self.rng.gen_bool(0.7) {
            (String::new(), String::new())
        } else {
            let rid = self.request_ids.choose(&mut self.rng).cloned().unwrap_or_default();
            (self.pick_app(), rid)
        };
        Query::new(&app, &rid, op, target).with_arg("mode", "forged")
    }

    /// Mostly stays inside the app's mask so requests get past the tagger
    /// and exercise the monitor.
    fn intent_for(&mut self, app: &str) -> Intent {
        let held: BTreeSet<ResourceId> = self
            .p
            .tagger
            .masks(app)
            .iter()
            .flat_map(|m| m.resources().into_iter().cloned())
            .collect();
        let mut intent = self.random_intent();
        for _ in 0..6 {
            if !self.rng.gen_bool(0.85) || intent.kind().required_resources().is_subset(&held) {
                break;
            }
            intent = self.random_intent();
        }
        intent
    }

    /// Vector 1: arbitrary requests, some with foreign resources or stolen
    /// credentials.
    fn request(&mut self) {
        let app = self.pick_app();
        let intent = self.intent_for(&app);
        let mut req = self.p.request_for(&app, intent);
        if self.rng.gen_bool(0.1) {
            let extra = *RESOURCES.choose(&mut self.rng).expect("non-empty");
            req.requested_resources
                .insert(ResourceId::new(extra).expect("static resource id"));
        }
        if self.rng.gen_bool(0.1) {
            let other = self.pick_app();
            req.credential = self.p.mano.credential(&other).unwrap_or("guess").to_string();
        }
        self.summary.requests += 1;
        match self.p.request(req) {
            RequestOutcome::Dropped(e) => {
                self.summary.dropped_at_tagger += 1;
                *self.summary.drops.entry(e.code().to_string()).or_default() += 1;
            }
            RequestOutcome::Tagged { record, .. } => self.request_ids.push(record.request_id),
        }
    }

    /// Vector 4: controller misbehaviour.
    fn fault(&mut self) {
        let fault = match self.rng.gen_range(0..5) {
            0 => Fault::Delay {
                k: self.rng.gen_range(1..=3),
            },
            1 => {
                let mut perm: Vec<usize> = (0..self.rng.gen_range(2..=3)).collect();
                perm.shuffle(&mut self.rng);
                Fault::Reorder { perm }
            }
            2 => Fault::ForgeExtra {
                query: self.random_query(),
            },
            3 => Fault::DropBatch,
            _ => Fault::SwapMask {
                app_id: self.pick_app(),
            },
        };
        self.summary.faults_injected += 1;
        self.p.inject_fault(fault);
    }

    fn flip_string(&mut self, s: &mut String) {
        let mut bytes = s.clone().into_bytes();
        if bytes.is_empty() {
            bytes.push(b'x');
        } else {
            let i = self.rng.gen_range(0..bytes.len());
            bytes[i] ^= self.rng.gen_range(1..0x80u8);
        }
        *s = String::from_utf8_lossy(&bytes).into_owned();
    }

    /// Vector 2: tampering with tags, batches and sealed queries in transit.
    fn tamper(&mut self) {
        let app = self.pick_app();
        let intent = self.intent_for(&app);
        let req = self.p.request_for(&app, intent);
        let (record, fwd) = match self.p.tag(req) {
            Ok(t) => t,
            Err(e) => {
                self.summary.dropped_at_tagger += 1;
                *self.summary.drops.entry(e.code().to_string()).or_default() += 1;
                return;
            }
        };
        self.request_ids.push(record.request_id.clone());
        self.summary.tamper_attempts += 1;
        match self.rng.gen_range(0..3) {
            0 => {
                let mut bad = record.clone();
                self.flip_record(&mut bad);
                if self.p.deliver_tag(bad) {
                    self.summary.tamper_accepted += 1;
                }
                self.p.submit(fwd);
                self.p.pump();
            }
            1 => {
                self.p.deliver_tag(record);
                self.p.submit(fwd);
                let mut batches = self.p.emit();
                if let Some(b) = batches.first_mut() {
                    self.flip_batch(b);
                }
                for b in &batches {
                    self.p.deliver_batch(b);
                }
            }
            _ => {
                self.p.deliver_tag(record);
                self.p.submit(fwd);
                let batches = self.p.emit();
                for b in &batches {
                    let view = self.p.nib.read_view();
                    let releases = self.p.monitor.verify_batch(b, &view);
                    for rel in releases {
                        for sq in &rel.sealed {
                            let mut bad = sq.clone();
                            self.flip_sealed(&mut bad);
                            if self.p.execute_sealed(&bad).is_ok() {
                                self.summary.tamper_accepted += 1;
                            }
                            let _ = self.p.execute_sealed(sq);
                            if self.p.execute_sealed(sq).is_ok() {
                                self.summary.tamper_accepted += 1;
                            }
                        }
                        self.p
                            .controller
                            .on_verdict(&rel.verdict.request_id, rel.verdict.accepted());
                    }
                }
                let forged = SealedQuery {
                    query: self.random_query(),
                    scope: Default::default(),
                    nonce: Nonce(self.rng.gen()),
                    mac: self.rng.gen(),
                };
                if self.p.execute_sealed(&forged).is_ok() {
                    self.summary.tamper_accepted += 1;
                }
            }
        }
    }

    fn flip_record(&mut self, r: &mut TagRecord) {
        match self.rng.gen_range(0..5) {
            0 => self.flip_string(&mut r.app_id),
            1 => self.flip_string(&mut r.request_id),
            2 => {
                let i = self.rng.gen_range(0..32);
                r.mask_digest[i] ^= self.rng.gen_range(1..=255u8);
            }
            3 => {
                let bit = self.rng.gen_range(0..64);
                r.counter ^= 1 << bit;
            }
            _ => {
                let i = self.rng.gen_range(0..32);
                r.mac[i] ^= self.rng.gen_range(1..=255u8);
            }
        }
    }

    fn flip_batch(&mut self, b: &mut Batch) {
        match self.rng.gen_range(0..3) {
            0 => self.flip_string(&mut b.app_id),
            1 => self.flip_string(&mut b.request_id),
            _ => {
                let q = self.random_query();
                if b.queries.is_empty() {
                    b.queries.push(q);
                } else {
                    let i = self.rng.gen_range(0..b.queries.len());
                    let (app, rid) = (b.queries[i].app_id.clone(), b.queries[i].request_id.clone());
                    b.queries[i] = Query {
                        app_id: app,
                        request_id: rid,
                        ..q
                    };
                }
            }
        }
    }

    fn flip_sealed(&mut self, sq: &mut SealedQuery) {
        match self.rng.gen_range(0..4) {
            0 => {
                let i = self.rng.gen_range(0..32);
                sq.mac[i] ^= self.rng.gen_range(1..=255u8);
            }
            1 => {
                let i = self.rng.gen_range(0..16);
                sq.nonce.0[i] ^= self.rng.gen_range(1..=255u8);
            }
            2 => self.flip_string(&mut sq.query.request_id),
            _ => {
                sq.scope.jurisdictions = None;
                sq.scope.placements = Some(BTreeSet::from(["everywhere".to_string()]));
            }
        }
    }

    fn churn(&mut self) {
        if self.apps.is_empty() {
            return;
        }
        if self.rng.gen_bool(0.85) {
            let from = self.pick_app();
            let to = if self.rng.gen_bool(0.5) {
                format!("del{}", self.rng.gen_range(0..3))
            } else {
                self.pick_app()
            };
            let n = self.p.mano.app(&from).map(|r| r.mask.tuples().len()).unwrap_or(0);
            let subset: Vec<usize> = (0..n + 1).filter(|_| self.rng.gen_bool(0.5)).collect();
            if self.p.delegate(&from, &to, &subset).is_ok() && !self.apps.contains(&to) {
                self.apps.push(to);
            }
        } else {
            let app = self.pick_app();
            let _ = self.p.terminate(&app);
        }
    }

    fn run(mut self, steps: usize) -> AdversarySummary {
        self.enroll_apps();
        for _ in 0..steps {
            match self.rng.gen_range(0..100) {
                0..=39 => self.request(),
                40..=64 => self.fault(),
                65..=89 => self.tamper(),
                _ => self.churn(),
            }
        }
        self.p.flush();
        let mut s = self.summary;
        s.runs = 1;
        for v in self.p.monitor.verdicts() {
            *s.verdicts.entry(v.decision.as_str().to_string()).or_default() += 1;
        }
        s.executed_queries = self.p.nib.executed().len();
        s.violations = soundness_violations(&self.p, &self.topo);
        s
    }
}

/// Runs `runs` independent campaigns derived from `seed`.
pub fn adversary_suite(seed: u64, runs: usize) -> AdversarySummary {
    let mut total = AdversarySummary::default();
    for i in 0..runs {
        let run_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
        let s = Campaign::new(run_seed).run(24);
        total.runs += s.runs;
        total.requests += s.requests;
        total.dropped_at_tagger += s.dropped_at_tagger;
        for (k, v) in s.drops {
            *total.drops.entry(k).or_default() += v;
        }
        total.faults_injected += s.faults_injected;
        total.tamper_attempts += s.tamper_attempts;
        total.tamper_accepted += s.tamper_accepted;
        total.executed_queries += s.executed_queries;
        for (k, v) in s.verdicts {
            *total.verdicts.entry(k).or_default() += v;
        }
        total
            .violations
            .extend(s.violations.into_iter().map(|v| format!("run {i}: {v}")));
    }
    total
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TagIntegrityReport {
    pub trials: usize,
    pub rejected: usize,
    pub false_accepts: usize,
    pub field_counts: BTreeMap<String, usize>,
    pub replay_rejected: bool,
}

fn integrity_pipeline(seed: u64) -> Pipeline {
    let topo = load_topology(fixtures::TWO_REGION_MESH).expect("fixture loads");
    let mut p = Pipeline::new(
        topo,
        PipelineConfig {
            seed,
            mitigation: MitigationPolicy::LogOnly,
            ..PipelineConfig::default()
        },
    );
    let doc = r#"{"app_id": "viewer", "entries": [{"resource": "dataplane-topology", "actions": ["read"]}]}"#;
    p.enroll(doc, AccessModel::of(ModelVariant::CommonsUncontrolled), &[])
        .expect("viewer enrolls");
    p
}

/// Flips one random byte of a tag record per trial and checks the tagged
/// request never reaches the NIB; then replays a genuine request.
pub fn tag_integrity(seed: u64, trials: usize) -> TagIntegrityReport {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut report = TagIntegrityReport::default();
    for t in 0..trials {
        let mut p = integrity_pipeline(seed.wrapping_add(t as u64));
        let req = p.request_for("viewer", Intent::topology_read());
        let (record, fwd) = p.tag(req).expect("genuine request tags");
        let mut bad = record.clone();
        let field = match rng.gen_range(0..5) {
            0 => {
                let i = rng.gen_range(0..bad.app_id.len());
                let mut b = bad.app_id.into_bytes();
                b[i] ^= rng.gen_range(1..0x80u8);
                bad.app_id = String::from_utf8(b).expect("ascii stays ascii");
                "app_id"
            }
            1 => {
                let i = rng.gen_range(0..bad.request_id.len());
                let mut b = bad.request_id.into_bytes();
                b[i] ^= rng.gen_range(1..0x80u8);
                bad.request_id = String::from_utf8(b).expect("ascii stays ascii");
                "request_id"
            }
            2 => {
                bad.mask_digest[rng.gen_range(0..32)] ^= rng.gen_range(1..=255u8);
                "mask_digest"
            }
            3 => {
                let mut b = bad.counter.to_be_bytes();
                b[rng.gen_range(0..8)] ^= rng.gen_range(1..=255u8);
                bad.counter = u64::from_be_bytes(b);
                "counter"
            }
            _ => {
                bad.mac[rng.gen_range(0..32)] ^= rng.gen_range(1..=255u8);
                "mac"
            }
        };
        *report.field_counts.entry(field.to_string()).or_default() += 1;
        report.trials += 1;
        let record_accepted = p.deliver_tag(bad);
        p.submit(fwd);
        let verdicts = p.flush();
        let executed = !p.nib.executed().is_empty();
        if record_accepted || executed || verdicts.iter().any(|v| v.accepted()) {
            report.false_accepts += 1;
        } else {
            report.rejected += 1;
        }
    }

    let mut p = integrity_pipeline(seed);
    let req = p.request_for("viewer", Intent::topology_read());
    let (record, fwd) = p.tag(req).expect("genuine request tags");
    let mut replay_ok = p.deliver_tag(record.clone());
    p.submit(fwd);
    let batches = p.emit();
    let view = p.nib.read_view();
    let first = p.monitor.verify_batch(&batches[0], &view);
    replay_ok &= first.len() == 1 && first[0].verdict.accepted();
    let sealed = first[0].sealed[0].clone();
    replay_ok &= p.execute_sealed(&sealed).is_ok();
    let again = p.monitor.verify_batch(&batches[0], &view);
    replay_ok &= again.len() == 1 && again[0].verdict.decision == Decision::RejectStale;
    replay_ok &= !p.deliver_tag(record);
    replay_ok &= p.execute_sealed(&sealed).is_err();
    report.replay_rejected = replay_ok;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_campaign_is_sound() {
        let s = adversary_suite(11, 25);
        assert_eq!(s.runs, 25);
        assert!(s.violations.is_empty(), "{:?}", s.violations);
        assert_eq!(s.tamper_accepted, 0);
        assert!(s.executed_queries > 0);
    }

    #[test]
    fn oracle_flags_out_of_mask_execution() {
        let mut p = integrity_pipeline(3);
        let topo = p.nib.read_view();
        let req = p.request_for("viewer", Intent::topology_read());
        let (record, _) = p.tag(req).expect("tags");
        // Seal a flow install directly with the NIB key, bypassing the monitor.
        let q = Query::new(
            "viewer",
            &record.request_id,
            QueryOp::ConfigMod,
            Target::Node("s1".into()),
        );
        let sq = SealedQuery::seal(&p.keys().k_nib.clone(), q, Default::default(), Nonce([5; 16]));
        p.execute_sealed(&sq).expect("well-sealed query executes");
        assert_eq!(soundness_violations(&p, &topo).len(), 1);
    }

    #[test]
    fn integrity_trials_reject_everything() {
        let r = tag_integrity(5, 20);
        assert_eq!(r.rejected, 20);
        assert_eq!(r.false_accepts, 0);
        assert!(r.replay_rejected);
    }
}
