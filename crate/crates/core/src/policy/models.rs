//! Access-model admission, arbitration and delegation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use super::{AccessMask, ModelVariant, PolicyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Admission {
    Grant,
    Deny,
    /// The model resolves access by negotiation, which is not implemented;
    /// the caller falls back to priority arbitration.
    DeferToPriority,
}

fn family_root<'a>(app: &'a str, masks: &'a [AccessMask]) -> &'a str {
    let mut current = app;
    let mut hops = 0;
    while let Some(parent) = masks
        .iter()
        .find(|m| m.app_id() == current && m.parent().is_some())
        .and_then(AccessMask::parent)
    {
        current = parent;
        hops += 1;
        if hops > masks.len() {
            break;
        }
    }
    current
}

/// Winner of a contended resource: highest priority, then smallest app id.
pub fn arbitrate(masks: &[AccessMask]) -> Option<&str> {
    masks
        .iter()
        .filter(|m| m.parent().is_none())
        .max_by(|a, b| {
            a.model()
                .priority
                .cmp(&b.model().priority)
                .then_with(|| b.app_id().cmp(a.app_id()))
        })
        .map(AccessMask::app_id)
}

/// Decides whether `incoming` may use a resource that every mask in `masks`
/// touches.
pub fn admit_under_model(masks: &[AccessMask], incoming: &str) -> Result<Admission, PolicyError> {
    let own: Vec<&AccessMask> = masks.iter().filter(|m| m.app_id() == incoming).collect();
    if own.is_empty() {
        return Err(PolicyError::UnknownApp(incoming.to_string()));
    }
    let incoming_root = family_root(incoming, masks);
    if masks.iter().all(|m| family_root(m.app_id(), masks) == incoming_root) {
        return Ok(Admission::Grant);
    }

    let exclusive_holders: BTreeSet<&str> = masks
        .iter()
        .filter(|m| m.parent().is_none() && m.model().variant.is_exclusive())
        .map(AccessMask::app_id)
        .collect();
    if !exclusive_holders.is_empty() {
        return Ok(if exclusive_holders.contains(incoming_root) {
            Admission::Grant
        } else {
            Admission::Deny
        });
    }

    let variant = own[0].model().variant;
    if matches!(variant, ModelVariant::SharedNegotiated | ModelVariant::CommonsManaged) {
        return Ok(Admission::DeferToPriority);
    }
    let contended = masks.iter().any(|m| m.model().variant == ModelVariant::SharedPriority);
    if !contended {
        // Uncontrolled commons: everyone competes, arbitration happens
        // per conflicting request.
        return Ok(Admission::Grant);
    }
    Ok(if arbitrate(masks) == Some(incoming_root) {
        Admission::Grant
    } else {
        Admission::Deny
    })
}

/// Derives a mask for `to` from a subset of `parent`'s tuples.
pub fn delegate_mask(parent: &AccessMask, to: &str, subset: &[usize]) -> Result<AccessMask, PolicyError> {
    if !parent.model().delegable {
        return Err(PolicyError::NonDelegable(parent.app_id().to_string()));
    }
    let mut picked = BTreeSet::new();
    let mut tuples = Vec::new();
    for &index in subset {
        let tuple = parent.tuples().get(index).ok_or_else(|| PolicyError::SubsetEscape {
            app_id: parent.app_id().to_string(),
            index,
        })?;
        if picked.insert(index) {
            tuples.push(tuple.clone());
        }
    }
    Ok(AccessMask::assemble(
        to.to_string(),
        tuples,
        *parent.model(),
        Some(parent.app_id().to_string()),
    ))
}

/// Delegation edges, parent to children.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DelegationGraph {
    edges: BTreeMap<String, BTreeSet<String>>,
}

impl DelegationGraph {
    pub fn add_edge(&mut self, from: &str, to: &str) {
        self.edges.entry(from.to_string()).or_default().insert(to.to_string());
    }

    pub fn children(&self, app: &str) -> impl Iterator<Item = &str> {
        self.edges.get(app).into_iter().flatten().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.edges.values().all(BTreeSet::is_empty)
    }
}

/// Removes every app reachable from `terminated` through delegation edges,
/// together with the edges themselves. Returns the revoked apps in BFS order.
pub fn revoke_delegations(graph: &mut DelegationGraph, terminated: &str) -> Vec<String> {
    let mut seen = BTreeSet::from([terminated.to_string()]);
    let mut queue = VecDeque::from([terminated.to_string()]);
    let mut revoked = Vec::new();
    while let Some(app) = queue.pop_front() {
        let children: Vec<String> = graph.children(&app).map(str::to_string).collect();
        for child in children {
            if seen.insert(child.clone()) {
                revoked.push(child.clone());
                queue.push_back(child);
            }
        }
    }
    for app in &seen {
        graph.edges.remove(app);
    }
    for kids in graph.edges.values_mut() {
        kids.retain(|k| !seen.contains(k));
    }
    revoked
}
