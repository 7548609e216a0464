use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::nib::FlowMatch;
use crate::policy::{resources, AttributeConstraint, ResourceId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntentKind {
    Connectivity {
        src_host: String,
        dst_host: String,
        protocol: String,
        src_port: u16,
        dst_port: u16,
    },
    TopologyRead {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        filter: Option<String>,
    },
    NodeLtps {
        node_id: String,
    },
    FlowInstall {
        node: String,
        flow: FlowMatch,
    },
    StatsRead {
        flow_id: String,
    },
    /// Removes the flows installed for an earlier request of the same app.
    Withdraw {
        request_id: String,
    },
}

impl IntentKind {
    pub fn name(&self) -> &'static str {
        match self {
            IntentKind::Connectivity { .. } => "connectivity",
            IntentKind::TopologyRead { .. } => "topology_read",
            IntentKind::NodeLtps { .. } => "node_ltps",
            IntentKind::FlowInstall { .. } => "flow_install",
            IntentKind::StatsRead { .. } => "stats_read",
            IntentKind::Withdraw { .. } => "withdraw",
        }
    }

    /// Resources an honest compilation of this intent touches.
    pub fn required_resources(&self) -> BTreeSet<ResourceId> {
        let name = match self {
            IntentKind::TopologyRead { .. } | IntentKind::NodeLtps { .. } => resources::TOPOLOGY,
            IntentKind::Connectivity { .. } | IntentKind::FlowInstall { .. } | IntentKind::Withdraw { .. } => {
                resources::FLOW
            }
            IntentKind::StatsRead { .. } => resources::STATS,
        };
        BTreeSet::from([ResourceId::new(name).expect("static resource id")])
    }
}

/// Application intent. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intent {
    kind: IntentKind,
    #[serde(default)]
    priority: i64,
    #[serde(default)]
    constraints: Vec<AttributeConstraint>,
}

impl Intent {
    pub fn new(kind: IntentKind) -> Self {
        Self {
            kind,
            priority: 0,
            constraints: Vec::new(),
        }
    }

    pub fn with(kind: IntentKind, priority: i64, constraints: Vec<AttributeConstraint>) -> Self {
        Self {
            kind,
            priority,
            constraints,
        }
    }

    pub fn kind(&self) -> &IntentKind {
        &self.kind
    }

    pub fn priority(&self) -> i64 {
        self.priority
    }

    pub fn constraints(&self) -> &[AttributeConstraint] {
        &self.constraints
    }

    pub fn topology_read() -> Self {
        Self::new(IntentKind::TopologyRead { filter: None })
    }

    pub fn node_ltps(node: &str) -> Self {
        Self::new(IntentKind::NodeLtps {
            node_id: node.to_string(),
        })
    }

    pub fn connectivity(src: &str, dst: &str, protocol: &str, src_port: u16, dst_port: u16) -> Self {
        Self::new(IntentKind::Connectivity {
            src_host: src.to_string(),
            dst_host: dst.to_string(),
            protocol: protocol.to_string(),
            src_port,
            dst_port,
        })
    }

    pub fn withdraw(request_id: &str) -> Self {
        Self::new(IntentKind::Withdraw {
            request_id: request_id.to_string(),
        })
    }
}
