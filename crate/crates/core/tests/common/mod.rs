//! Independent brute-force oracles and random instance generators shared by
//! the property tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use naca_core::controller::{IntentEvent, IntentState, Query, QueryOp, Target};
use naca_core::monitor::Decision;
use naca_core::nib::{FlowMatch, NibSnapshot};
use naca_core::policy::{
    build_operator_policy_set, compute_access_mask, AccessMask, AccessModel, Action, Attribute, AttributeConstraint,
    Comparator, DeploymentManifest, ManifestEntry, Mapping, ModelVariant, ResourceAccessRule, ResourceId,
};
use rand::seq::SliceRandom;
use rand::Rng;

pub const JURISDICTIONS: [&str; 3] = ["region-A", "region-B", "region-C"];
pub const PLACEMENTS: [&str; 2] = ["edge", "core"];
pub const MOD_CLASSES: [&str; 2] = ["read", "modify"];

pub const VARIANTS: [ModelVariant; 8] = [
    ModelVariant::DirectExplicit,
    ModelVariant::ExclusiveLongterm,
    ModelVariant::ExclusiveDynamic,
    ModelVariant::SharedPriority,
    ModelVariant::SharedNegotiated,
    ModelVariant::CommonsUncontrolled,
    ModelVariant::CommonsManaged,
    ModelVariant::CommonsPrivate,
];

/// Whether a model variant keeps a resource to its holder (and, for the
/// private commons, the holder's delegates). Written out by hand.
pub fn exclusive(v: ModelVariant) -> bool {
    matches!(
        v,
        ModelVariant::DirectExplicit
            | ModelVariant::ExclusiveLongterm
            | ModelVariant::ExclusiveDynamic
            | ModelVariant::CommonsPrivate
    )
}

fn rid(s: &str) -> ResourceId {
    ResourceId::new(s).expect("valid resource id")
}

fn subset<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> Vec<&'a str> {
    loop {
        let s: Vec<&str> = pool.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

fn random_constraint<R: Rng>(rng: &mut R, attr: Attribute) -> AttributeConstraint {
    let pool: &[&str] = match attr {
        Attribute::Jurisdiction => &JURISDICTIONS,
        Attribute::Placement => &PLACEMENTS,
        _ => &MOD_CLASSES,
    };
    let values = subset(rng, pool);
    if values.len() == 1 && rng.gen_bool(0.5) {
        AttributeConstraint::equals(attr, values[0])
    } else {
        AttributeConstraint::one_of(attr, values)
    }
}

pub fn random_rule<R: Rng>(rng: &mut R, id: String, resource: &str) -> ResourceAccessRule {
    let mut constraints = Vec::new();
    for attr in [
        Attribute::Jurisdiction,
        Attribute::Placement,
        Attribute::ModificationType,
    ] {
        if rng.gen_bool(0.4) {
            constraints.push(random_constraint(rng, attr));
        }
    }
    let rule = ResourceAccessRule::new(id, rid(resource), constraints).expect("valid rule");
    if rng.gen_bool(0.3) {
        rule.with_actions(Action::ALL.into_iter().filter(|_| rng.gen_bool(0.6)))
    } else {
        rule
    }
}

pub fn random_manifest<R: Rng>(rng: &mut R, app: &str, resources: &[String]) -> DeploymentManifest {
    let mut entries = Vec::new();
    for r in resources {
        if rng.gen_bool(0.6) {
            let mut actions: BTreeSet<Action> = Action::ALL.into_iter().filter(|_| rng.gen_bool(0.4)).collect();
            if actions.is_empty() {
                actions.insert(*Action::ALL.choose(rng).expect("non-empty"));
            }
            entries.push(ManifestEntry {
                resource: rid(r),
                actions,
            });
        }
    }
    entries.shuffle(rng);
    DeploymentManifest::new(app, entries).expect("distinct resources")
}

/// One app of a mask-algebra instance.
#[derive(Debug, Clone)]
pub struct AppInstance {
    pub manifest: DeploymentManifest,
    pub rules: Vec<ResourceAccessRule>,
    pub model: AccessModel,
}

/// At most 5 apps, 6 resources and 4 rules per app.
pub fn random_instance<R: Rng>(rng: &mut R) -> Vec<AppInstance> {
    let n_res = rng.gen_range(1..=6);
    let resources: Vec<String> = (0..n_res).map(|i| format!("res-{i}")).collect();
    (0..rng.gen_range(1..=5))
        .map(|a| {
            let app = format!("app{a}");
            let manifest = random_manifest(rng, &app, &resources);
            let rules = (0..rng.gen_range(0..=4))
                .map(|k| {
                    let res = resources.choose(rng).expect("non-empty");
                    random_rule(rng, format!("{app}-r{k}"), res)
                })
                .collect();
            let model = AccessModel::of(*VARIANTS.choose(rng).expect("non-empty"));
            AppInstance { manifest, rules, model }
        })
        .collect()
}

/// Operator rules relevant to a manifest, by direct scan.
pub fn oracle_policy_set(rules: &[ResourceAccessRule], dm: &DeploymentManifest) -> Vec<ResourceAccessRule> {
    let mut out = Vec::new();
    for r in rules {
        if dm.entries.iter().any(|e| e.resource == r.resource) {
            out.push(r.clone());
        }
    }
    out
}

/// Expected (resource, actions, rule ids) per manifest entry.
pub fn oracle_mask(
    rules: &[ResourceAccessRule],
    dm: &DeploymentManifest,
) -> Vec<(String, BTreeSet<Action>, Vec<String>)> {
    dm.entries
        .iter()
        .map(|e| {
            let attached: Vec<&ResourceAccessRule> = rules.iter().filter(|r| r.resource == e.resource).collect();
            let actions = Action::ALL
                .into_iter()
                .filter(|a| e.actions.contains(a))
                .filter(|a| {
                    attached
                        .iter()
                        .all(|r| r.actions.as_ref().is_none_or(|s| s.contains(a)))
                })
                .collect();
            (
                e.resource.as_str().to_string(),
                actions,
                attached.iter().map(|r| r.rule_id.clone()).collect(),
            )
        })
        .collect()
}

pub fn mask_shape(m: &AccessMask) -> Vec<(String, BTreeSet<Action>, Vec<String>)> {
    m.tuples()
        .iter()
        .map(|t| {
            (
                t.resource.as_str().to_string(),
                t.actions.clone(),
                t.rules.iter().map(|r| r.rule_id.clone()).collect(),
            )
        })
        .collect()
}

/// Classification straight from the definitions over the rule→entry
/// relation.
pub fn oracle_mapping(rules: &[ResourceAccessRule], dm: &DeploymentManifest) -> Mapping {
    let target = |r: &ResourceAccessRule| dm.entries.iter().position(|e| e.resource == r.resource);
    let mut injective = true;
    for i in 0..rules.len() {
        for j in i + 1..rules.len() {
            if target(&rules[i]) == target(&rules[j]) {
                injective = false;
            }
        }
    }
    let surjective = (0..dm.entries.len()).all(|e| rules.iter().any(|r| target(r) == Some(e)));
    match (injective, surjective) {
        (true, true) => Mapping::Bijective,
        (false, true) => Mapping::Surjective,
        (true, false) => Mapping::Injective,
        (false, false) => Mapping::Partial,
    }
}

fn constraint_allows(c: &AttributeConstraint, v: &str) -> bool {
    match c.comparator {
        Comparator::Equals => c.values.first().map(String::as_str) == Some(v),
        Comparator::OneOf => c.values.iter().any(|x| x == v),
    }
}

/// Every (jurisdiction, placement, modification class) point.
fn points() -> Vec<[(Attribute, &'static str); 3]> {
    let mut out = Vec::new();
    for j in JURISDICTIONS {
        for p in PLACEMENTS {
            for m in MOD_CLASSES {
                out.push([
                    (Attribute::Jurisdiction, j),
                    (Attribute::Placement, p),
                    (Attribute::ModificationType, m),
                ]);
            }
        }
    }
    out
}

fn admits_point(rules: &[ResourceAccessRule], point: &[(Attribute, &str); 3]) -> bool {
    rules.iter().all(|r| {
        r.constraints.iter().all(|c| {
            point
                .iter()
                .find(|(a, _)| *a == c.attribute)
                .is_none_or(|(_, v)| constraint_allows(c, v))
        })
    })
}

/// Conflicting (other app, resource, shared values) triples by enumerating
/// the whole attribute space.
pub fn oracle_conflicts(
    candidate: &AccessMask,
    installed: &BTreeMap<String, AccessMask>,
) -> BTreeSet<(String, String, BTreeMap<Attribute, Vec<String>>)> {
    let mut out = BTreeSet::new();
    let pts = points();
    for other in installed.values() {
        if other.app_id() == candidate.app_id() {
            continue;
        }
        if !exclusive(candidate.model().variant) && !exclusive(other.model().variant) {
            continue;
        }
        for ta in candidate.tuples() {
            for tb in other.tuples() {
                if ta.resource != tb.resource {
                    continue;
                }
                let common: Vec<_> = pts
                    .iter()
                    .filter(|p| admits_point(&ta.rules, p) && admits_point(&tb.rules, p))
                    .collect();
                if common.is_empty() {
                    continue;
                }
                let both = |attr: Attribute, rules: &[ResourceAccessRule]| {
                    rules.iter().any(|r| r.constraints.iter().any(|c| c.attribute == attr))
                };
                let mut shared = BTreeMap::new();
                for (i, attr) in [
                    Attribute::Jurisdiction,
                    Attribute::Placement,
                    Attribute::ModificationType,
                ]
                .into_iter()
                .enumerate()
                {
                    if both(attr, &ta.rules) && both(attr, &tb.rules) {
                        let vals: BTreeSet<String> = common.iter().map(|p| p[i].1.to_string()).collect();
                        shared.insert(attr, vals.into_iter().collect());
                    }
                }
                out.insert((other.app_id().to_string(), ta.resource.as_str().to_string(), shared));
            }
        }
    }
    out
}

pub fn build_mask(app: &AppInstance) -> AccessMask {
    let op = build_operator_policy_set(&app.rules, &app.manifest);
    compute_access_mask(&op, &app.manifest, app.model).expect("policy set maps")
}

/// Expected monitor outcome for one query, evaluated against the mask
/// tuples and the topology without going through the monitor.
pub fn oracle_check(mask: &AccessMask, q: &Query, topo: &NibSnapshot) -> Result<(), Decision> {
    let (res, action) = match q.op {
        QueryOp::TopoRead | QueryOp::NodeLtps => ("dataplane-topology", Action::Read),
        QueryOp::Subscribe => ("dataplane-topology", Action::Subscr),
        QueryOp::FlowInstall | QueryOp::FlowDelete => ("flow", Action::ConfigMod),
        QueryOp::StatsRead => ("stats", Action::Stat),
        QueryOp::ConfigRead => ("device-config", Action::ConfigRead),
        QueryOp::ConfigMod => ("device-config", Action::ConfigMod),
    };
    let Some(t) = mask.tuples().iter().find(|t| t.resource.as_str() == res) else {
        return Err(Decision::RejectMaskResource);
    };
    if !t.actions.contains(&action) {
        return Err(Decision::RejectMaskAction);
    }
    let nodes: Vec<&str> = match &q.target {
        Target::Topology => vec![],
        Target::Node(n) | Target::Flow { node: n, .. } => vec![n.as_str()],
        Target::Link(id) => match topo.links.iter().find(|l| &l.id() == id) {
            Some(l) => vec![l.a.node.as_str(), l.b.node.as_str()],
            None => return Err(Decision::RejectMaskResource),
        },
        Target::FlowId(id) => match topo.flows.get(id) {
            Some(f) => vec![f.node.as_str()],
            None => return Err(Decision::RejectMaskResource),
        },
    };
    if nodes.iter().any(|n| !topo.nodes.contains_key(*n)) {
        return Err(Decision::RejectMaskResource);
    }
    let class = if action == Action::ConfigMod { "modify" } else { "read" };
    for r in &t.rules {
        for c in &r.constraints {
            let ok = match c.attribute {
                Attribute::Jurisdiction => nodes.iter().all(|n| constraint_allows(c, &topo.nodes[*n].jurisdiction)),
                Attribute::Placement => nodes.iter().all(|n| constraint_allows(c, &topo.nodes[*n].placement)),
                _ => true,
            };
            if !ok {
                return Err(Decision::RejectMaskAttribute);
            }
        }
    }
    for r in &t.rules {
        for c in &r.constraints {
            if c.attribute == Attribute::ModificationType && !constraint_allows(c, class) {
                return Err(Decision::RejectMaskAttribute);
            }
        }
    }
    Ok(())
}

/// Random query over the given topology, including unknown targets.
pub fn random_query<R: Rng>(rng: &mut R, topo: &NibSnapshot) -> Query {
    let op = *naca_core::controller::QueryOp::ALL.choose(rng).expect("non-empty");
    let mut nodes: Vec<String> = topo.nodes.keys().cloned().collect();
    nodes.push("ghost".into());
    let node = nodes.choose(rng).expect("non-empty").clone();
    let target = match rng.gen_range(0..5) {
        0 => Target::Topology,
        1 => Target::Node(node),
        2 => {
            let mut links: Vec<String> = topo.links.iter().map(|l| l.id()).collect();
            links.push("x/1-y/1".into());
            Target::Link(links.choose(rng).expect("non-empty").clone())
        }
        3 => Target::Flow {
            node,
            flow: FlowMatch::new("10.0.0.1", "10.0.0.2", "udp", 1, 2),
        },
        _ => {
            let mut ids: Vec<String> = topo.flows.keys().cloned().collect();
            ids.push("ghost|none".into());
            Target::FlowId(ids.choose(rng).expect("non-empty").clone())
        }
    };
    Query::new("app0", "app0/1", op, target)
}

/// Random mask over the four catalogue resources, for compliance checks.
pub fn random_catalogue_mask<R: Rng>(rng: &mut R) -> AccessMask {
    let catalogue: Vec<String> = ["dataplane-topology", "flow", "stats", "device-config"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let manifest = random_manifest(rng, "app0", &catalogue);
    let rules: Vec<ResourceAccessRule> = (0..rng.gen_range(0..=4))
        .map(|k| {
            let res = catalogue.choose(rng).expect("non-empty");
            random_rule(rng, format!("r{k}"), res)
        })
        .collect();
    build_mask(&AppInstance {
        manifest,
        rules,
        model: AccessModel::of(ModelVariant::CommonsUncontrolled),
    })
}

/// Topology with flows installed on a couple of nodes, over three regions.
pub fn mesh_with_flows() -> NibSnapshot {
    let mut topo = naca_core::nib::load_topology(naca_core::nib::fixtures::TWO_REGION_MESH).expect("fixture");
    topo.nodes.get_mut("s5").expect("s5").jurisdiction = "region-C".into();
    for node in ["s1", "s4", "s5"] {
        let flow = FlowMatch::new("10.0.1.1", "10.0.2.5", "udp", 1, 2);
        let id = naca_core::nib::flow_id(node, &flow);
        topo.flows.insert(
            id,
            naca_core::nib::FlowEntry {
                node: node.into(),
                flow,
                action: "allow".into(),
                owner: "app0".into(),
                request_id: "app0/0".into(),
                packets: 0,
                bytes: 0,
            },
        );
    }
    topo
}

/// Lifecycle adjacency written out independently: (from, event, to).
pub const ADJACENCY: [(IntentState, IntentEvent, IntentState); 17] = {
    use IntentEvent as E;
    use IntentState as S;
    [
        (S::RequestTagger, E::TaggedQueryRequest, S::InstallRequest),
        (S::InstallRequest, E::SubmitForCompilation, S::Compiling),
        (S::Compiling, E::CompileSucceeded, S::Installing),
        (S::Recompiling, E::CompileSucceeded, S::Installing),
        (S::Installing, E::InstallSucceeded, S::RefMonitor),
        (S::RefMonitor, E::VerifyAccessCompliance, S::Installed),
        (S::Installed, E::WithdrawalInstalled, S::Withdrawing),
        (S::Installed, E::RemoveTopoOrFlowEvent, S::Recompiling),
        (S::Failed, E::AddUpdateTopoEvent, S::Recompiling),
        (S::Compiling, E::CompileFailed, S::Failed),
        (S::Failed, E::RetryCompile, S::Compiling),
        (S::Installing, E::InstallFailed, S::Failed),
        (S::Failed, E::RetryInstall, S::Installing),
        (S::Recompiling, E::CompileFailedOrSameResult, S::Installed),
        (S::Failed, E::WithdrawalOfFailed, S::Withdrawing),
        (S::RefMonitor, E::RefMonitorRejected, S::Failed),
        (S::Withdrawn, E::RetryInstallIntent, S::InstallRequest),
    ]
};
