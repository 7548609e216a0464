//! Network information base: topology, flow table and attribute store.
//!
//! State changes only through [`Nib::execute`], which requires a query
//! sealed by the reference monitor with `K_NIB` and a nonce it has not
//! seen before.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authcode::{canonical_encode, mac_compute, mac_verify, Field, MacBytes, MacKey, Nonce};
use crate::controller::{Query, QueryOp, Target};
use crate::policy::Attribute;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NibError {
    #[error("topology document: {0}")]
    Schema(String),
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("link references unknown endpoint {node}/{ltp}")]
    DanglingLink { node: String, ltp: String },
    #[error("host {host} attaches to unknown endpoint {node}/{ltp}")]
    DanglingHost { host: String, node: String, ltp: String },
    #[error("query MAC does not verify")]
    BadMac,
    #[error("nonce {0} already used")]
    ReplayedNonce(String),
    #[error("unknown target {0}")]
    UnknownTarget(String),
    #[error("{op} cannot operate on {target}")]
    WrongTarget { op: &'static str, target: String },
}

/// Exact-match flow 5-tuple. Protocol is stored upper-case.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowMatch {
    pub src_ip: String,
    pub dst_ip: String,
    pub protocol: String,
    pub src_port: u16,
    pub dst_port: u16,
}

impl FlowMatch {
    pub fn new(src_ip: &str, dst_ip: &str, protocol: &str, src_port: u16, dst_port: u16) -> Self {
        Self {
            src_ip: src_ip.to_string(),
            dst_ip: dst_ip.to_string(),
            protocol: protocol.to_ascii_uppercase(),
            src_port,
            dst_port,
        }
    }

    pub fn normalized(&self) -> Self {
        Self::new(&self.src_ip, &self.dst_ip, &self.protocol, self.src_port, self.dst_port)
    }
}

impl fmt::Display for FlowMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}->{}:{}/{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.protocol
        )
    }
}

pub fn flow_id(node: &str, flow: &FlowMatch) -> String {
    format!("{node}|{}", flow.normalized())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub jurisdiction: String,
    pub placement: String,
    pub ltps: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub node: String,
    pub ltp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link {
    pub a: Endpoint,
    pub b: Endpoint,
}

impl NodeInfo {
    /// Value of a node-level attribute, if the NIB tracks it.
    pub fn attribute(&self, attribute: Attribute) -> Option<&str> {
        match attribute {
            Attribute::Jurisdiction => Some(&self.jurisdiction),
            Attribute::Placement => Some(&self.placement),
            _ => None,
        }
    }
}

impl Link {
    pub fn id(&self) -> String {
        format!("{}/{}-{}/{}", self.a.node, self.a.ltp, self.b.node, self.b.ltp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostInfo {
    pub ip: String,
    pub attach: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlowEntry {
    pub node: String,
    pub flow: FlowMatch,
    pub action: String,
    pub owner: String,
    pub request_id: String,
    pub packets: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NibSnapshot {
    pub nodes: BTreeMap<String, NodeInfo>,
    pub links: Vec<Link>,
    pub hosts: BTreeMap<String, HostInfo>,
    pub flows: BTreeMap<String, FlowEntry>,
    pub subscriptions: BTreeSet<(String, String)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    nodes: Vec<TopologyNode>,
    #[serde(default)]
    links: Vec<[(String, String); 2]>,
    #[serde(default)]
    hosts: Vec<TopologyHost>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyNode {
    id: String,
    jurisdiction: String,
    placement: String,
    #[serde(default)]
    ltps: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyHost {
    id: String,
    ip: String,
    attach: (String, String),
}

/// Parses and validates a topology document.
pub fn load_topology(doc: &str) -> Result<NibSnapshot, NibError> {
    let raw: TopologyDoc = serde_json::from_str(doc).map_err(|e| NibError::Schema(e.to_string()))?;
    let mut snap = NibSnapshot::default();
    for n in raw.nodes {
        if n.id.is_empty() {
            return Err(NibError::Schema("empty node id".into()));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = n.ltps.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(NibError::Schema(format!("duplicate ltp {dup} on {}", n.id)));
        }
        let info = NodeInfo {
            jurisdiction: n.jurisdiction,
            placement: n.placement,
            ltps: n.ltps,
            config: BTreeMap::new(),
        };
        if snap.nodes.insert(n.id.clone(), info).is_some() {
            return Err(NibError::DuplicateNode(n.id));
        }
    }
    for [(an, al), (bn, bl)] in raw.links {
        for (node, ltp) in [(&an, &al), (&bn, &bl)] {
            if !snap.has_endpoint(node, ltp) {
                return Err(NibError::DanglingLink {
                    node: node.clone(),
                    ltp: ltp.clone(),
                });
            }
        }
        snap.links.push(Link {
            a: Endpoint { node: an, ltp: al },
            b: Endpoint { node: bn, ltp: bl },
        });
    }
    for h in raw.hosts {
        let (node, ltp) = h.attach;
        if !snap.has_endpoint(&node, &ltp) {
            return Err(NibError::DanglingHost { host: h.id, node, ltp });
        }
        snap.hosts.insert(
            h.id,
            HostInfo {
                ip: h.ip,
                attach: Endpoint { node, ltp },
            },
        );
    }
    Ok(snap)
}

impl NibSnapshot {
    fn has_endpoint(&self, node: &str, ltp: &str) -> bool {
        self.nodes.get(node).is_some_and(|n| n.ltps.iter().any(|l| l == ltp))
    }

    /// Adjacent node ids in ascending order.
    pub fn neighbors(&self, node: &str) -> Vec<&str> {
        let set: BTreeSet<&str> = self
            .links
            .iter()
            .filter_map(|l| {
                if l.a.node == node {
                    Some(l.b.node.as_str())
                } else if l.b.node == node {
                    Some(l.a.node.as_str())
                } else {
                    None
                }
            })
            .collect();
        set.into_iter().collect()
    }

    pub fn link(&self, id: &str) -> Option<&Link> {
        self.links.iter().find(|l| l.id() == id)
    }

    /// Hop distance from `from` to every node reachable through nodes
    /// accepted by `allowed`.
    pub fn distances(&self, from: &str, allowed: impl Fn(&str) -> bool) -> BTreeMap<String, usize> {
        let mut dist = BTreeMap::new();
        if !self.nodes.contains_key(from) || !allowed(from) {
            return dist;
        }
        dist.insert(from.to_string(), 0);
        let mut queue = VecDeque::from([from.to_string()]);
        while let Some(n) = queue.pop_front() {
            let d = dist[&n];
            for m in self.neighbors(&n) {
                if allowed(m) && !dist.contains_key(m) {
                    dist.insert(m.to_string(), d + 1);
                    queue.push_back(m.to_string());
                }
            }
        }
        dist
    }

    /// Topology restricted to `scope`: nodes in scope, and links whose both
    /// ends are in scope.
    pub fn scoped(&self, scope: &Scope) -> (Vec<String>, Vec<String>) {
        let nodes: Vec<String> = self
            .nodes
            .iter()
            .filter(|(_, info)| scope.admits(info))
            .map(|(id, _)| id.clone())
            .collect();
        let links = self
            .links
            .iter()
            .filter(|l| nodes.contains(&l.a.node) && nodes.contains(&l.b.node))
            .map(Link::id)
            .collect();
        (nodes, links)
    }
}

/// Attribute scope the monitor attaches to a sealed query. `None` means
/// unrestricted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Scope {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jurisdictions: Option<BTreeSet<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub placements: Option<BTreeSet<String>>,
}

impl Scope {
    pub fn admits(&self, node: &NodeInfo) -> bool {
        self.jurisdictions
            .as_ref()
            .is_none_or(|s| s.contains(&node.jurisdiction))
            && self.placements.as_ref().is_none_or(|s| s.contains(&node.placement))
    }

    fn encode(&self) -> Vec<u8> {
        fn set(out: &mut Vec<u8>, s: &Option<BTreeSet<String>>) {
            match s {
                None => out.extend(canonical_encode(&[Field::U64(0)])),
                Some(values) => {
                    out.extend(canonical_encode(&[Field::U64(1), Field::U64(values.len() as u64)]));
                    for v in values {
                        out.extend(canonical_encode(&[Field::Str(v)]));
                    }
                }
            }
        }
        let mut out = Vec::new();
        set(&mut out, &self.jurisdictions);
        set(&mut out, &self.placements);
        out
    }
}

/// A monitor-approved query with its nonce and `K_NIB` MAC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SealedQuery {
    pub query: Query,
    pub scope: Scope,
    pub nonce: Nonce,
    #[serde(serialize_with = "hex_mac")]
    pub mac: MacBytes,
}

fn hex_mac<S: serde::Serializer>(m: &MacBytes, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(m))
}

impl SealedQuery {
    pub fn mac_input(query: &Query, scope: &Scope, nonce: &Nonce) -> Vec<u8> {
        canonical_encode(&[
            Field::Bytes(&query.encode()),
            Field::Bytes(&scope.encode()),
            Field::Bytes(&nonce.0),
        ])
    }

    pub fn seal(key: &MacKey, query: Query, scope: Scope, nonce: Nonce) -> Self {
        let mac = mac_compute(key, &Self::mac_input(&query, &scope, &nonce));
        Self {
            query,
            scope,
            nonce,
            mac,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum QueryResult {
    Topology {
        nodes: Vec<String>,
        links: Vec<String>,
    },
    Ltps {
        node: String,
        ltps: Vec<String>,
    },
    FlowInstalled {
        flow_id: String,
    },
    FlowDeleted {
        flow_id: String,
    },
    Stats {
        flow_id: String,
        packets: u64,
        bytes: u64,
    },
    Config {
        node: String,
        config: BTreeMap<String, String>,
    },
    ConfigUpdated {
        node: String,
    },
    Subscribed {
        target: String,
    },
}

/// One NIB-side record per submitted sealed query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NibRecord {
    pub app_id: String,
    pub request_id: String,
    pub op: QueryOp,
    pub target: String,
    pub outcome: String,
}

/// Accepted query as executed, kept for post-hoc soundness checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutedQuery {
    pub query: Query,
    pub scope: Scope,
    pub result: Option<QueryResult>,
}

#[derive(Debug)]
pub struct Nib {
    snapshot: NibSnapshot,
    key: MacKey,
    nonces: BTreeSet<Nonce>,
    log: Vec<NibRecord>,
    executed: Vec<ExecutedQuery>,
}

impl Nib {
    pub fn new(snapshot: NibSnapshot, key: MacKey) -> Self {
        Self {
            snapshot,
            key,
            nonces: BTreeSet::new(),
            log: Vec::new(),
            executed: Vec::new(),
        }
    }

    pub fn read_view(&self) -> NibSnapshot {
        self.snapshot.clone()
    }

    pub fn view(&self) -> &NibSnapshot {
        &self.snapshot
    }

    pub fn log(&self) -> &[NibRecord] {
        &self.log
    }

    pub fn executed(&self) -> &[ExecutedQuery] {
        &self.executed
    }

    pub fn nonce_count(&self) -> usize {
        self.nonces.len()
    }

    fn record(&mut self, q: &Query, outcome: &str) {
        self.log.push(NibRecord {
            app_id: q.app_id.clone(),
            request_id: q.request_id.clone(),
            op: q.op,
            target: q.target.to_string(),
            outcome: outcome.to_string(),
        });
    }

    pub fn execute(&mut self, sq: &SealedQuery) -> Result<QueryResult, NibError> {
        let input = SealedQuery::mac_input(&sq.query, &sq.scope, &sq.nonce);
        if !mac_verify(&self.key, &input, &sq.mac) {
            self.record(&sq.query, "dropped_bad_mac");
            return Err(NibError::BadMac);
        }
        if !self.nonces.insert(sq.nonce) {
            self.record(&sq.query, "dropped_replayed_nonce");
            return Err(NibError::ReplayedNonce(sq.nonce.to_hex()));
        }
        let result = self.dispatch(&sq.query, &sq.scope);
        self.record(&sq.query, if result.is_ok() { "executed" } else { "failed" });
        self.executed.push(ExecutedQuery {
            query: sq.query.clone(),
            scope: sq.scope.clone(),
            result: result.as_ref().ok().cloned(),
        });
        result
    }

    pub(crate) fn dispatch(&mut self, q: &Query, scope: &Scope) -> Result<QueryResult, NibError> {
        let wrong = || NibError::WrongTarget {
            op: q.op.as_str(),
            target: q.target.to_string(),
        };
        let snap = &mut self.snapshot;
        match (q.op, &q.target) {
            (QueryOp::TopoRead, Target::Topology) => {
                let (nodes, links) = snap.scoped(scope);
                Ok(QueryResult::Topology { nodes, links })
            }
            (QueryOp::NodeLtps, Target::Node(n)) => {
                let info = snap
                    .nodes
                    .get(n)
                    .filter(|info| scope.admits(info))
                    .ok_or_else(|| NibError::UnknownTarget(n.clone()))?;
                Ok(QueryResult::Ltps {
                    node: n.clone(),
                    ltps: info.ltps.clone(),
                })
            }
            (QueryOp::FlowInstall, Target::Flow { node, flow }) => {
                if !snap.nodes.contains_key(node) {
                    return Err(NibError::UnknownTarget(node.clone()));
                }
                let id = flow_id(node, flow);
                snap.flows.entry(id.clone()).or_insert_with(|| FlowEntry {
                    node: node.clone(),
                    flow: flow.normalized(),
                    action: q.args.get("action").cloned().unwrap_or_else(|| "allow".into()),
                    owner: q.app_id.clone(),
                    request_id: q.request_id.clone(),
                    packets: 0,
                    bytes: 0,
                });
                Ok(QueryResult::FlowInstalled { flow_id: id })
            }
            (QueryOp::FlowDelete, Target::Flow { node, flow }) => {
                let id = flow_id(node, flow);
                snap.flows
                    .remove(&id)
                    .ok_or_else(|| NibError::UnknownTarget(id.clone()))?;
                Ok(QueryResult::FlowDeleted { flow_id: id })
            }
            (QueryOp::FlowDelete, Target::FlowId(id)) => {
                snap.flows
                    .remove(id)
                    .ok_or_else(|| NibError::UnknownTarget(id.clone()))?;
                Ok(QueryResult::FlowDeleted { flow_id: id.clone() })
            }
            (QueryOp::StatsRead, Target::FlowId(id)) => {
                let f = snap.flows.get(id).ok_or_else(|| NibError::UnknownTarget(id.clone()))?;
                Ok(QueryResult::Stats {
                    flow_id: id.clone(),
                    packets: f.packets,
                    bytes: f.bytes,
                })
            }
            (QueryOp::ConfigRead, Target::Node(n)) => {
                let info = snap.nodes.get(n).ok_or_else(|| NibError::UnknownTarget(n.clone()))?;
                Ok(QueryResult::Config {
                    node: n.clone(),
                    config: info.config.clone(),
                })
            }
            (QueryOp::ConfigMod, Target::Node(n)) => {
                let info = snap
                    .nodes
                    .get_mut(n)
                    .ok_or_else(|| NibError::UnknownTarget(n.clone()))?;
                info.config.extend(q.args.iter().map(|(k, v)| (k.clone(), v.clone())));
                Ok(QueryResult::ConfigUpdated { node: n.clone() })
            }
            (QueryOp::Subscribe, target) => {
                let t = target.to_string();
                snap.subscriptions.insert((q.app_id.clone(), t.clone()));
                Ok(QueryResult::Subscribed { target: t })
            }
            _ => Err(wrong()),
        }
    }
}

pub mod fixtures {
    //! Topologies shipped with the crate.

    pub const LINE_3: &str = include_str!("../fixtures/line3.json");
    pub const TWO_REGION_MESH: &str = include_str!("../fixtures/two_region_mesh.json");
}
