use thiserror::Error;

use super::{Intent, IntentKind, Query, QueryOp, Target};
use crate::nib::{FlowMatch, NibSnapshot, NodeInfo};
use crate::policy::{resources, AccessMask, Attribute, ResourceId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("unknown host {0}")]
    UnknownHost(String),
    #[error("no admissible path from {src} to {dst}")]
    NoPath { src: String, dst: String },
}

fn node_admissible(intent: &Intent, mask: &AccessMask, node: &NodeInfo) -> bool {
    let flow = ResourceId::new(resources::FLOW).expect("static resource id");
    let mask_ok = mask.tuple(&flow).is_none_or(|t| {
        [Attribute::Jurisdiction, Attribute::Placement]
            .into_iter()
            .all(|a| node.attribute(a).is_some_and(|v| t.admits(a, v)))
    });
    let intent_ok = intent.constraints().iter().all(|c| match node.attribute(c.attribute) {
        Some(v) => c.allows(v),
        None => true,
    });
    mask_ok && intent_ok
}

/// Lexicographically smallest among the shortest paths from `src` to `dst`
/// over nodes accepted by `allowed`.
pub fn shortest_path(view: &NibSnapshot, src: &str, dst: &str, allowed: impl Fn(&str) -> bool) -> Option<Vec<String>> {
    let dist = view.distances(dst, &allowed);
    let mut d = *dist.get(src)?;
    let mut path = vec![src.to_string()];
    let mut current = src.to_string();
    while d > 0 {
        let next = view
            .neighbors(&current)
            .into_iter()
            .find(|n| dist.get(*n) == Some(&(d - 1)))?
            .to_string();
        path.push(next.clone());
        current = next;
        d -= 1;
    }
    Some(path)
}

/// Turns an intent into NIB queries. Depends only on its arguments.
pub fn compile(
    app_id: &str,
    request_id: &str,
    intent: &Intent,
    mask: &AccessMask,
    view: &NibSnapshot,
) -> Result<Vec<Query>, CompileError> {
    let q = |op, target| Query::new(app_id, request_id, op, target);
    match intent.kind() {
        IntentKind::Connectivity {
            src_host,
            dst_host,
            protocol,
            src_port,
            dst_port,
        } => {
            let src = view
                .hosts
                .get(src_host)
                .ok_or_else(|| CompileError::UnknownHost(src_host.clone()))?;
            let dst = view
                .hosts
                .get(dst_host)
                .ok_or_else(|| CompileError::UnknownHost(dst_host.clone()))?;
            let allowed = |n: &str| {
                view.nodes
                    .get(n)
                    .is_some_and(|info| node_admissible(intent, mask, info))
            };
            let path = shortest_path(view, &src.attach.node, &dst.attach.node, allowed).ok_or_else(|| {
                CompileError::NoPath {
                    src: src_host.clone(),
                    dst: dst_host.clone(),
                }
            })?;
            let flow = FlowMatch::new(&src.ip, &dst.ip, protocol, *src_port, *dst_port);
            Ok(path
                .into_iter()
                .map(|node| {
                    q(
                        QueryOp::FlowInstall,
                        Target::Flow {
                            node,
                            flow: flow.clone(),
                        },
                    )
                    .with_arg("action", "allow")
                })
                .collect())
        }
        IntentKind::TopologyRead { filter } => {
            let query = q(QueryOp::TopoRead, Target::Topology);
            Ok(vec![match filter {
                Some(f) => query.with_arg("filter", f),
                None => query,
            }])
        }
        IntentKind::NodeLtps { node_id } => Ok(vec![q(QueryOp::NodeLtps, Target::Node(node_id.clone()))]),
        IntentKind::FlowInstall { node, flow } => Ok(vec![q(
            QueryOp::FlowInstall,
            Target::Flow {
                node: node.clone(),
                flow: flow.normalized(),
            },
        )
        .with_arg("action", "allow")]),
        IntentKind::StatsRead { flow_id } => Ok(vec![q(QueryOp::StatsRead, Target::FlowId(flow_id.clone()))]),
        IntentKind::Withdraw { request_id: target } => Ok(view
            .flows
            .iter()
            .filter(|(_, f)| f.owner == app_id && &f.request_id == target)
            .map(|(id, _)| q(QueryOp::FlowDelete, Target::FlowId(id.clone())))
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nib::{fixtures, load_topology};
    use crate::policy::{
        compute_access_mask, AccessModel, Action, AttributeConstraint, DeploymentManifest, ManifestEntry, ModelVariant,
        OperatorPolicySet, ResourceAccessRule,
    };

    fn flow_mask(jurisdiction: Option<&str>) -> AccessMask {
        let flow = ResourceId::new("flow").unwrap();
        let dm = DeploymentManifest::new(
            "app",
            vec![ManifestEntry {
                resource: flow.clone(),
                actions: [Action::ConfigMod].into(),
            }],
        )
        .unwrap();
        let rules = jurisdiction
            .map(|j| {
                vec![
                    ResourceAccessRule::new("r", flow, vec![AttributeConstraint::equals(Attribute::Jurisdiction, j)])
                        .unwrap(),
                ]
            })
            .unwrap_or_default();
        compute_access_mask(
            &OperatorPolicySet { rules },
            &dm,
            AccessModel::of(ModelVariant::CommonsUncontrolled),
        )
        .unwrap()
    }

    fn nodes(queries: &[Query]) -> Vec<String> {
        queries
            .iter()
            .map(|q| match &q.target {
                Target::Flow { node, .. } => node.clone(),
                other => panic!("unexpected target {other}"),
            })
            .collect()
    }

    #[test]
    fn connectivity_on_line() {
        let view = load_topology(fixtures::LINE_3).unwrap();
        let intent = Intent::connectivity("h1", "h2", "udp", 5000, 6000);
        let out = compile("app", "app/1", &intent, &flow_mask(None), &view).unwrap();
        assert_eq!(nodes(&out), vec!["s1", "s2"]);
        assert!(out
            .iter()
            .all(|q| q.op == QueryOp::FlowInstall && q.args["action"] == "allow"));
        let Target::Flow { flow, .. } = &out[0].target else {
            unreachable!()
        };
        assert_eq!(flow, &FlowMatch::new("10.0.0.1", "10.0.0.2", "UDP", 5000, 6000));
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // s1 -> s5: s1-s2-s5 and s1-s3-s4-s5; the first is shorter.
        let view = load_topology(fixtures::TWO_REGION_MESH).unwrap();
        let intent = Intent::connectivity("h1", "h5", "tcp", 1, 2);
        let out = compile("app", "app/1", &intent, &flow_mask(None), &view).unwrap();
        assert_eq!(nodes(&out), vec!["s1", "s2", "s5"]);
        // s3 -> s5 has two 2-hop paths, via s2 and via s4.
        let intent = Intent::connectivity("h3", "h5", "tcp", 1, 2);
        let out = compile("app", "app/1", &intent, &flow_mask(None), &view).unwrap();
        assert_eq!(nodes(&out), vec!["s3", "s2", "s5"]);
    }

    #[test]
    fn mask_restricts_path() {
        let view = load_topology(fixtures::TWO_REGION_MESH).unwrap();
        let intent = Intent::connectivity("h1", "h5", "tcp", 1, 2);
        let err = compile("app", "app/1", &intent, &flow_mask(Some("region-A")), &view).unwrap_err();
        assert!(matches!(err, CompileError::NoPath { .. }));
        let intent = Intent::connectivity("h4", "h5", "tcp", 1, 2);
        let out = compile("app", "app/1", &intent, &flow_mask(Some("region-B")), &view).unwrap();
        assert_eq!(nodes(&out), vec!["s4", "s5"]);
    }

    #[test]
    fn one_to_one_kinds() {
        let view = load_topology(fixtures::LINE_3).unwrap();
        let m = flow_mask(None);
        let out = compile("a", "a/1", &Intent::topology_read(), &m, &view).unwrap();
        assert_eq!(out, vec![Query::new("a", "a/1", QueryOp::TopoRead, Target::Topology)]);
        let out = compile("a", "a/2", &Intent::node_ltps("s2"), &m, &view).unwrap();
        assert_eq!(
            out,
            vec![Query::new("a", "a/2", QueryOp::NodeLtps, Target::Node("s2".into()))]
        );
    }

    #[test]
    fn unknown_host() {
        let view = load_topology(fixtures::LINE_3).unwrap();
        let intent = Intent::connectivity("h1", "h9", "udp", 1, 2);
        assert_eq!(
            compile("a", "a/1", &intent, &flow_mask(None), &view),
            Err(CompileError::UnknownHost("h9".into()))
        );
    }
}
