//! Reference monitor: checks every compiled batch against the tag the
//! tagger issued and the mask MANO computed, then seals accepted queries
//! for the NIB.

mod window;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use window::{Window, WindowStep, DEFAULT_WINDOW};

use crate::audit::AuditEvent;
use crate::authcode::{mac_verify, MacKey, NonceSource};
use crate::controller::{Batch, Query, Target};
use crate::nib::{NibSnapshot, Scope, SealedQuery};
use crate::policy::{AccessMask, Attribute, MaskTuple, ResourceId};
use crate::tagger::TagRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    RejectMac,
    RejectStale,
    RejectWindow,
    RejectMaskResource,
    RejectMaskAction,
    RejectMaskAttribute,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Accept => "accept",
            Decision::RejectMac => "reject_mac",
            Decision::RejectStale => "reject_stale",
            Decision::RejectWindow => "reject_window",
            Decision::RejectMaskResource => "reject_mask_resource",
            Decision::RejectMaskAction => "reject_mask_action",
            Decision::RejectMaskAttribute => "reject_mask_attribute",
        }
    }

    pub fn is_mask_violation(self) -> bool {
        matches!(
            self,
            Decision::RejectMaskResource | Decision::RejectMaskAction | Decision::RejectMaskAttribute
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub app_id: String,
    pub request_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counter: Option<u64>,
    pub decision: Decision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_index: Option<usize>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub reason: String,
}

impl Verdict {
    fn new(batch: &Batch, counter: Option<u64>, decision: Decision, reason: impl Into<String>) -> Self {
        Self {
            app_id: batch.app_id.clone(),
            request_id: batch.request_id.clone(),
            counter,
            decision,
            query_index: None,
            reason: reason.into(),
        }
    }

    pub fn accepted(&self) -> bool {
        self.decision == Decision::Accept
    }
}

/// A final verdict plus, when accepted, the sealed queries for the NIB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Release {
    pub verdict: Verdict,
    pub sealed: Vec<SealedQuery>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("tag record for {0} fails MAC verification")]
    TamperedRecord(String),
    #[error("counter {0} already recorded")]
    ReplayedCounter(u64),
    #[error("request id {0} already recorded")]
    ReplayedRequest(String),
}

/// Rejection found while checking one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub decision: Decision,
    pub reason: String,
}

fn violation(decision: Decision, reason: impl Into<String>) -> Violation {
    Violation {
        decision,
        reason: reason.into(),
    }
}

/// Nodes whose attributes decide whether `target` is within a mask.
/// Topology-wide reads are scoped at the NIB instead.
pub fn resolve_nodes(target: &Target, view: &NibSnapshot) -> Option<Vec<String>> {
    let known = |n: &str| view.nodes.contains_key(n).then(|| n.to_string());
    match target {
        Target::Topology => Some(Vec::new()),
        Target::Node(n) => Some(vec![known(n)?]),
        Target::Flow { node, .. } => Some(vec![known(node)?]),
        Target::Link(id) => {
            let link = view.link(id)?;
            Some(vec![known(&link.a.node)?, known(&link.b.node)?])
        }
        Target::FlowId(id) => Some(vec![known(&view.flows.get(id)?.node)?]),
    }
}

/// NIB-side scope implied by a mask tuple.
pub fn tuple_scope(tuple: &MaskTuple) -> Scope {
    let owned = |s: Option<BTreeSet<&str>>| s.map(|v| v.into_iter().map(str::to_string).collect());
    Scope {
        jurisdictions: owned(tuple.admitted(Attribute::Jurisdiction)),
        placements: owned(tuple.admitted(Attribute::Placement)),
    }
}

/// Checks one query against a mask; on success returns the scope the NIB
/// must apply when executing it.
pub fn check_query(mask: &AccessMask, query: &Query, view: &NibSnapshot) -> Result<Scope, Violation> {
    let (resource, action) = query.op.resource_action();
    let resource = ResourceId::new(resource).expect("static resource id");
    let tuple = mask
        .tuple(&resource)
        .ok_or_else(|| violation(Decision::RejectMaskResource, format!("{resource} not in mask")))?;
    if !tuple.actions.contains(&action) {
        return Err(violation(
            Decision::RejectMaskAction,
            format!("{action} not granted on {resource}"),
        ));
    }
    let nodes = resolve_nodes(&query.target, view)
        .ok_or_else(|| violation(Decision::RejectMaskResource, format!("cannot resolve {}", query.target)))?;
    for node in &nodes {
        let info = &view.nodes[node];
        for attr in [Attribute::Jurisdiction, Attribute::Placement] {
            let value = info.attribute(attr).unwrap_or_default();
            if !tuple.admits(attr, value) {
                return Err(violation(
                    Decision::RejectMaskAttribute,
                    format!("{node} has {attr} {value}"),
                ));
            }
        }
    }
    let class = if action.is_modifying() { "modify" } else { "read" };
    if !tuple.admits(Attribute::ModificationType, class) {
        return Err(violation(
            Decision::RejectMaskAttribute,
            format!("{class} access not permitted on {resource}"),
        ));
    }
    Ok(tuple_scope(tuple))
}

#[derive(Debug, Clone)]
struct Held {
    batch: Batch,
    outcome: Result<Vec<(Query, Scope)>, Verdict>,
}

#[derive(Debug)]
pub struct Monitor {
    key: MacKey,
    nib_key: MacKey,
    window: Window,
    records: BTreeMap<u64, TagRecord>,
    by_request: BTreeMap<String, u64>,
    masks: BTreeMap<[u8; 32], AccessMask>,
    revoked: BTreeSet<[u8; 32]>,
    blocked: BTreeSet<String>,
    held: BTreeMap<u64, Held>,
    nonces: NonceSource,
    events: Vec<AuditEvent>,
    verdicts: Vec<Verdict>,
}

impl Monitor {
    pub fn new(key: MacKey, nib_key: MacKey, window_limit: u64, nonces: NonceSource) -> Self {
        Self {
            key,
            nib_key,
            window: Window::new(window_limit),
            records: BTreeMap::new(),
            by_request: BTreeMap::new(),
            masks: BTreeMap::new(),
            revoked: BTreeSet::new(),
            blocked: BTreeSet::new(),
            held: BTreeMap::new(),
            nonces,
            events: Vec::new(),
            verdicts: Vec::new(),
        }
    }

    pub fn register_mask(&mut self, mask: AccessMask) {
        self.masks.insert(*mask.digest(), mask);
    }

    /// Blocks an app and retires every mask it holds.
    pub fn revoke_app(&mut self, app_id: &str) {
        self.blocked.insert(app_id.to_string());
        for (digest, m) in &self.masks {
            if m.app_id() == app_id {
                self.revoked.insert(*digest);
            }
        }
    }

    pub fn quarantine(&mut self, app_id: &str) {
        self.blocked.insert(app_id.to_string());
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn verdicts(&self) -> &[Verdict] {
        &self.verdicts
    }

    pub fn take_events(&mut self) -> Vec<AuditEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn receive_tag_record(&mut self, tr: TagRecord) -> Result<(), MonitorError> {
        let result = if !tr.verify(&self.key) {
            Err(MonitorError::TamperedRecord(tr.request_id.clone()))
        } else if self.records.contains_key(&tr.counter) {
            Err(MonitorError::ReplayedCounter(tr.counter))
        } else if self.by_request.contains_key(&tr.request_id) {
            Err(MonitorError::ReplayedRequest(tr.request_id.clone()))
        } else {
            Ok(())
        };
        let ev = AuditEvent::new("monitor", "tag_record")
            .app(&tr.app_id)
            .request(&tr.request_id)
            .counter(tr.counter);
        match &result {
            Ok(()) => {
                self.events.push(ev.verdict("indexed"));
                self.by_request.insert(tr.request_id.clone(), tr.counter);
                self.records.insert(tr.counter, tr);
            }
            Err(e) => self.events.push(ev.verdict("rejected").reason(e.to_string())),
        }
        result
    }

    fn evaluate(&self, batch: &Batch, record: &TagRecord, view: &NibSnapshot) -> Result<Vec<(Query, Scope)>, Verdict> {
        let c = Some(record.counter);
        let reject = |d, why: String| Verdict::new(batch, c, d, why);
        if self.blocked.contains(&record.app_id) {
            return Err(reject(Decision::RejectMaskResource, "app blocked".into()));
        }
        if self.revoked.contains(&record.mask_digest) {
            return Err(reject(Decision::RejectMaskResource, "mask revoked".into()));
        }
        let mask = self
            .masks
            .get(&record.mask_digest)
            .filter(|m| m.app_id() == record.app_id)
            .ok_or_else(|| reject(Decision::RejectMaskResource, "no mask for tag".into()))?;
        let mut out = Vec::with_capacity(batch.queries.len());
        for (i, q) in batch.queries.iter().enumerate() {
            if q.app_id != batch.app_id || q.request_id != batch.request_id {
                let mut v = reject(Decision::RejectMac, "query not bound to tagged request".into());
                v.query_index = Some(i);
                return Err(v);
            }
            match check_query(mask, q, view) {
                Ok(scope) => out.push((q.clone(), scope)),
                Err(viol) => {
                    let mut v = reject(viol.decision, viol.reason);
                    v.query_index = Some(i);
                    return Err(v);
                }
            }
        }
        Ok(out)
    }

    fn finish(&mut self, batch: &Batch, counter: u64, outcome: Result<Vec<(Query, Scope)>, Verdict>) -> Release {
        let release = match outcome {
            Ok(queries) => {
                let sealed = queries
                    .into_iter()
                    .map(|(q, scope)| {
                        let nonce = self.nonces.fresh();
                        SealedQuery::seal(&self.nib_key, q, scope, nonce)
                    })
                    .collect();
                Release {
                    verdict: Verdict::new(batch, Some(counter), Decision::Accept, ""),
                    sealed,
                }
            }
            Err(verdict) => Release {
                verdict,
                sealed: Vec::new(),
            },
        };
        self.log_verdict(&release.verdict);
        release
    }

    fn log_verdict(&mut self, v: &Verdict) {
        let mut ev = AuditEvent::new("monitor", "verdict")
            .app(&v.app_id)
            .request(&v.request_id)
            .verdict(v.decision.as_str());
        if let Some(c) = v.counter {
            ev = ev.counter(c);
        }
        if !v.reason.is_empty() {
            ev = ev.reason(&v.reason);
        }
        self.events.push(ev);
        self.verdicts.push(v.clone());
    }

    fn reject_now(&mut self, batch: &Batch, counter: Option<u64>, d: Decision, why: &str) -> Release {
        let v = Verdict::new(batch, counter, d, why);
        self.log_verdict(&v);
        Release {
            verdict: v,
            sealed: Vec::new(),
        }
    }

    /// Processes one batch from the controller. Returns every verdict that
    /// became final as a result, in emission order.
    pub fn verify_batch(&mut self, batch: &Batch, view: &NibSnapshot) -> Vec<Release> {
        let Some(&counter) = self.by_request.get(&batch.request_id) else {
            return vec![self.reject_now(batch, None, Decision::RejectMac, "no tag record")];
        };
        let record = self.records[&counter].clone();
        let input = TagRecord::mac_input(&batch.app_id, &batch.request_id, &record.mask_digest, record.counter);
        if !mac_verify(&self.key, &input, &record.mac) {
            return vec![self.reject_now(batch, Some(counter), Decision::RejectMac, "tag mismatch")];
        }
        let records = &self.records;
        let step = self
            .window
            .arrive(counter, &batch.app_id, |k| records.get(&k).map(|r| r.app_id.as_str()));
        match step {
            WindowStep::Stale => {
                vec![self.reject_now(batch, Some(counter), Decision::RejectStale, "counter already used")]
            }
            WindowStep::Invalidated => {
                vec![self.reject_now(batch, Some(counter), Decision::RejectWindow, "skipped by invalidation")]
            }
            WindowStep::Held => {
                let outcome = self.evaluate(batch, &record, view);
                self.events.push(
                    AuditEvent::new("monitor", "held")
                        .app(&batch.app_id)
                        .request(&batch.request_id)
                        .counter(counter),
                );
                self.held.insert(
                    counter,
                    Held {
                        batch: batch.clone(),
                        outcome,
                    },
                );
                Vec::new()
            }
            WindowStep::InOrder { released } => {
                let outcome = self.evaluate(batch, &record, view);
                let mut out = vec![self.finish(batch, counter, outcome)];
                for c in released {
                    let h = self.held.remove(&c).expect("released counter was held");
                    out.push(self.finish(&h.batch, c, h.outcome));
                }
                out
            }
            WindowStep::Invalidate { dropped } => {
                let mut victims: Vec<(u64, Batch)> = dropped
                    .into_iter()
                    .map(|c| (c, self.held.remove(&c).expect("dropped counter was held").batch))
                    .collect();
                victims.push((counter, batch.clone()));
                victims.sort_by_key(|(c, _)| *c);
                victims
                    .into_iter()
                    .map(|(c, b)| self.reject_now(&b, Some(c), Decision::RejectWindow, "window invalidated"))
                    .collect()
            }
        }
    }
}
