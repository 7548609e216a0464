use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::authcode::{canonical_encode, Field};
use crate::nib::FlowMatch;
use crate::policy::{resources, Action};

/// Discrete NIB operation produced by compiling an intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOp {
    TopoRead,
    NodeLtps,
    FlowInstall,
    FlowDelete,
    StatsRead,
    ConfigRead,
    ConfigMod,
    Subscribe,
}

impl QueryOp {
    pub const ALL: [QueryOp; 8] = [
        QueryOp::TopoRead,
        QueryOp::NodeLtps,
        QueryOp::FlowInstall,
        QueryOp::FlowDelete,
        QueryOp::StatsRead,
        QueryOp::ConfigRead,
        QueryOp::ConfigMod,
        QueryOp::Subscribe,
    ];

    /// The resource a query of this kind invokes and the action it needs.
    pub fn resource_action(self) -> (&'static str, Action) {
        match self {
            QueryOp::TopoRead | QueryOp::NodeLtps => (resources::TOPOLOGY, Action::Read),
            QueryOp::Subscribe => (resources::TOPOLOGY, Action::Subscr),
            QueryOp::FlowInstall | QueryOp::FlowDelete => (resources::FLOW, Action::ConfigMod),
            QueryOp::StatsRead => (resources::STATS, Action::Stat),
            QueryOp::ConfigRead => (resources::DEVICE_CONFIG, Action::ConfigRead),
            QueryOp::ConfigMod => (resources::DEVICE_CONFIG, Action::ConfigMod),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QueryOp::TopoRead => "topo_read",
            QueryOp::NodeLtps => "node_ltps",
            QueryOp::FlowInstall => "flow_install",
            QueryOp::FlowDelete => "flow_delete",
            QueryOp::StatsRead => "stats_read",
            QueryOp::ConfigRead => "config_read",
            QueryOp::ConfigMod => "config_mod",
            QueryOp::Subscribe => "subscribe",
        }
    }
}

/// What a query operates on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Topology,
    Node(String),
    Link(String),
    Flow { node: String, flow: FlowMatch },
    FlowId(String),
}

impl Target {
    fn encode(&self) -> Vec<u8> {
        match self {
            Target::Topology => canonical_encode(&[Field::U64(0)]),
            Target::Node(n) => canonical_encode(&[Field::U64(1), Field::Str(n)]),
            Target::Link(l) => canonical_encode(&[Field::U64(2), Field::Str(l)]),
            Target::Flow { node, flow } => canonical_encode(&[
                Field::U64(3),
                Field::Str(node),
                Field::Str(&flow.src_ip),
                Field::Str(&flow.dst_ip),
                Field::Str(&flow.protocol),
                Field::U64(u64::from(flow.src_port)),
                Field::U64(u64::from(flow.dst_port)),
            ]),
            Target::FlowId(id) => canonical_encode(&[Field::U64(4), Field::Str(id)]),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Topology => f.write_str("topology"),
            Target::Node(n) => write!(f, "node:{n}"),
            Target::Link(l) => write!(f, "link:{l}"),
            Target::Flow { node, flow } => write!(f, "flow:{node}:{flow}"),
            Target::FlowId(id) => write!(f, "flow-id:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Query {
    pub app_id: String,
    pub request_id: String,
    pub op: QueryOp,
    pub target: Target,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
}

impl Query {
    pub fn new(app_id: &str, request_id: &str, op: QueryOp, target: Target) -> Self {
        Self {
            app_id: app_id.to_string(),
            request_id: request_id.to_string(),
            op,
            target,
            args: BTreeMap::new(),
        }
    }

    pub fn with_arg(mut self, key: &str, value: &str) -> Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut args = Vec::new();
        for (k, v) in &self.args {
            args.extend(canonical_encode(&[Field::Str(k), Field::Str(v)]));
        }
        canonical_encode(&[
            Field::Str(&self.app_id),
            Field::Str(&self.request_id),
            Field::U64(self.op as u64),
            Field::Bytes(&self.target.encode()),
            Field::Bytes(&args),
        ])
    }
}

/// Queries compiled from one tagged request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub app_id: String,
    pub request_id: String,
    pub queries: Vec<Query>,
}
