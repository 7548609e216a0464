//! Management and orchestration: enrollment, keys, the installed-app
//! dictionary, termination and mitigation.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::audit::AuditEvent;
use crate::authcode::MacKey;
use crate::monitor::{Decision, Monitor, Verdict};
use crate::policy::{
    build_operator_policy_set, compute_access_mask, delegate_mask, detect_conflicts, parse_manifest, resources,
    revoke_delegations, validate_requested_resources, AccessMask, AccessModel, ConflictReport, DelegationGraph,
    DeploymentManifest, ManifestEntry, PolicyError, ResourceAccessRule, ResourceId,
};
use crate::tagger::{TagError, Tagger};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManoError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("manifest requests resources outside the catalogue: {0:?}")]
    Catalogue(Vec<ResourceId>),
    #[error("conflicts with installed applications ({} pairs)", .0.pairs.len())]
    Conflict(ConflictReport),
    #[error("{0} is already enrolled")]
    AlreadyEnrolled(String),
    #[error("{0} is not an installed application")]
    NotInstalled(String),
    #[error(transparent)]
    Tagger(#[from] TagError),
}

impl ManoError {
    pub fn code(&self) -> &'static str {
        match self {
            ManoError::Policy(_) => "invalid_policy",
            ManoError::Catalogue(_) => "catalogue_violation",
            ManoError::Conflict(_) => "conflict",
            ManoError::AlreadyEnrolled(_) => "already_enrolled",
            ManoError::NotInstalled(_) => "not_installed",
            ManoError::Tagger(_) => "tagger_rejected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AppStatus {
    Candidate,
    Installed,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AppRecord {
    pub app_id: String,
    pub manifest: DeploymentManifest,
    pub mask: AccessMask,
    pub model: AccessModel,
    pub status: AppStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub quarantined: bool,
    /// Masks received by delegation on top of the app's own.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub delegated: Vec<AccessMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationPolicy {
    /// Quarantine the app whose tagged request compiled to a mask
    /// violation; log everything else.
    #[default]
    QuarantineOnMaskViolation,
    QuarantineAll,
    LogOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MitigationEntry {
    pub app_id: String,
    pub request_id: String,
    pub decision: Decision,
    pub action: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RevocationSummary {
    pub terminated: String,
    pub revoked: Vec<String>,
}

/// Key material shared by the trusted components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keys {
    /// Tagger and monitor.
    pub k: MacKey,
    /// Monitor and NIB.
    pub k_nib: MacKey,
}

pub fn provision_keys(rng: &mut ChaCha20Rng) -> Keys {
    Keys {
        k: MacKey::generate("K", rng),
        k_nib: MacKey::generate("K_NIB", rng),
    }
}

pub fn default_catalogue() -> BTreeSet<ResourceId> {
    [
        resources::TOPOLOGY,
        resources::FLOW,
        resources::STATS,
        resources::DEVICE_CONFIG,
    ]
    .into_iter()
    .map(|r| ResourceId::new(r).expect("static resource id"))
    .collect()
}

#[derive(Debug)]
pub struct Mano {
    apps: BTreeMap<String, AppRecord>,
    graph: DelegationGraph,
    credentials: BTreeMap<String, String>,
    policy: MitigationPolicy,
    mitigations: Vec<MitigationEntry>,
    rng: ChaCha20Rng,
    events: Vec<AuditEvent>,
}

impl Mano {
    pub fn new(policy: MitigationPolicy, rng: ChaCha20Rng) -> Self {
        Self {
            apps: BTreeMap::new(),
            graph: DelegationGraph::default(),
            credentials: BTreeMap::new(),
            policy,
            mitigations: Vec::new(),
            rng,
            events: Vec::new(),
        }
    }

    pub fn app(&self, app_id: &str) -> Option<&AppRecord> {
        self.apps.get(app_id)
    }

    pub fn apps(&self) -> &BTreeMap<String, AppRecord> {
        &self.apps
    }

    pub fn credential(&self, app_id: &str) -> Option<&str> {
        self.credentials.get(app_id).map(String::as_str)
    }

    pub fn mitigations(&self) -> &[MitigationEntry] {
        &self.mitigations
    }

    pub fn take_events(&mut self) -> Vec<AuditEvent> {
        std::mem::take(&mut self.events)
    }

    /// Masks of installed, non-delegated apps: the conflict dictionary.
    pub fn dictionary(&self) -> BTreeMap<String, AccessMask> {
        self.apps
            .values()
            .filter(|r| r.status == AppStatus::Installed && r.parent.is_none())
            .map(|r| (r.app_id.clone(), r.mask.clone()))
            .collect()
    }

    /// Every mask MANO ever issued, keyed by digest.
    pub fn issued_masks(&self) -> BTreeMap<[u8; 32], AccessMask> {
        self.apps
            .values()
            .flat_map(|r| std::iter::once(&r.mask).chain(&r.delegated))
            .map(|m| (*m.digest(), m.clone()))
            .collect()
    }

    fn issue_credential(&mut self, app_id: &str, tagger: &mut Tagger) {
        let mut raw = [0u8; 16];
        self.rng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        tagger.register_credential(app_id, &token);
        self.credentials.insert(app_id.to_string(), token);
    }

    /// Parses, validates and installs an app. Nothing reaches the tagger or
    /// monitor unless every step succeeds.
    pub fn enroll(
        &mut self,
        manifest_doc: &str,
        model: AccessModel,
        rules: &[ResourceAccessRule],
        catalogue: &BTreeSet<ResourceId>,
        tagger: &mut Tagger,
        monitor: &mut Monitor,
    ) -> Result<AppRecord, ManoError> {
        let result = self.try_enroll(manifest_doc, model, rules, catalogue, tagger, monitor);
        match &result {
            Ok(rec) => self.events.push(
                AuditEvent::new("mano", "enrolled")
                    .app(&rec.app_id)
                    .verdict("installed"),
            ),
            Err(e) => self
                .events
                .push(AuditEvent::new("mano", "enrolled").verdict("rejected").reason(e.code())),
        }
        result
    }

    fn try_enroll(
        &mut self,
        manifest_doc: &str,
        model: AccessModel,
        rules: &[ResourceAccessRule],
        catalogue: &BTreeSet<ResourceId>,
        tagger: &mut Tagger,
        monitor: &mut Monitor,
    ) -> Result<AppRecord, ManoError> {
        let manifest = parse_manifest(manifest_doc)?;
        if self.apps.contains_key(&manifest.app_id) {
            return Err(ManoError::AlreadyEnrolled(manifest.app_id));
        }
        validate_requested_resources(&manifest, catalogue).map_err(ManoError::Catalogue)?;
        let op = build_operator_policy_set(rules, &manifest);
        let mask = compute_access_mask(&op, &manifest, model)?;
        let report = detect_conflicts(&mask, &self.dictionary());
        if !report.is_empty() {
            return Err(ManoError::Conflict(report));
        }
        tagger.register_mask(mask.clone())?;
        monitor.register_mask(mask.clone());
        let app_id = manifest.app_id.clone();
        self.issue_credential(&app_id, tagger);
        let record = AppRecord {
            app_id: app_id.clone(),
            manifest,
            mask,
            model,
            status: AppStatus::Installed,
            parent: None,
            quarantined: false,
            delegated: Vec::new(),
        };
        self.apps.insert(app_id, record.clone());
        Ok(record)
    }

    /// Hands a subset of `from`'s tuples to `to`. An unknown `to` becomes a
    /// new installed app holding only the delegated mask.
    pub fn delegate(
        &mut self,
        from: &str,
        to: &str,
        subset: &[usize],
        tagger: &mut Tagger,
        monitor: &mut Monitor,
    ) -> Result<AccessMask, ManoError> {
        let parent = self
            .apps
            .get(from)
            .filter(|r| r.status == AppStatus::Installed)
            .ok_or_else(|| ManoError::NotInstalled(from.to_string()))?;
        let mask = delegate_mask(&parent.mask, to, subset)?;
        match self.apps.get(to).map(|r| r.status) {
            Some(AppStatus::Installed) => {
                tagger.add_delegated_mask(mask.clone())?;
                self.apps
                    .get_mut(to)
                    .expect("checked above")
                    .delegated
                    .push(mask.clone());
            }
            Some(_) => return Err(ManoError::NotInstalled(to.to_string())),
            None => {
                let entries = mask
                    .tuples()
                    .iter()
                    .map(|t| ManifestEntry {
                        resource: t.resource.clone(),
                        actions: t.actions.clone(),
                    })
                    .collect();
                let manifest = DeploymentManifest::new(to, entries)?;
                tagger.register_mask(mask.clone())?;
                self.issue_credential(to, tagger);
                self.apps.insert(
                    to.to_string(),
                    AppRecord {
                        app_id: to.to_string(),
                        manifest,
                        mask: mask.clone(),
                        model: *mask.model(),
                        status: AppStatus::Installed,
                        parent: Some(from.to_string()),
                        quarantined: false,
                        delegated: Vec::new(),
                    },
                );
            }
        }
        monitor.register_mask(mask.clone());
        self.graph.add_edge(from, to);
        self.events.push(
            AuditEvent::new("mano", "delegated")
                .app(to)
                .reason(format!("from {from}")),
        );
        Ok(mask)
    }

    /// Terminates an app and everything it delegated to, transitively.
    pub fn terminate(
        &mut self,
        app_id: &str,
        tagger: &mut Tagger,
        monitor: &mut Monitor,
    ) -> Result<RevocationSummary, ManoError> {
        if !self.apps.get(app_id).is_some_and(|r| r.status == AppStatus::Installed) {
            return Err(ManoError::NotInstalled(app_id.to_string()));
        }
        let revoked = revoke_delegations(&mut self.graph, app_id);
        for app in std::iter::once(app_id).chain(revoked.iter().map(String::as_str)) {
            if let Some(rec) = self.apps.get_mut(app) {
                rec.status = AppStatus::Terminated;
            }
            tagger.revoke(app);
            monitor.revoke_app(app);
            let event = if app == app_id { "terminated" } else { "revoked" };
            self.events.push(AuditEvent::new("mano", event).app(app));
        }
        Ok(RevocationSummary {
            terminated: app_id.to_string(),
            revoked,
        })
    }

    /// Reacts to a monitor rejection.
    pub fn handle_mitigation(
        &mut self,
        verdict: &Verdict,
        tagger: &mut Tagger,
        monitor: &mut Monitor,
    ) -> Option<MitigationEntry> {
        if verdict.accepted() {
            return None;
        }
        let quarantine = match self.policy {
            MitigationPolicy::QuarantineOnMaskViolation => verdict.decision.is_mask_violation(),
            MitigationPolicy::QuarantineAll => true,
            MitigationPolicy::LogOnly => false,
        };
        let known = self
            .apps
            .get(&verdict.app_id)
            .is_some_and(|r| r.status == AppStatus::Installed);
        let action = if quarantine && known {
            let rec = self.apps.get_mut(&verdict.app_id).expect("known app");
            if rec.quarantined {
                "already_quarantined"
            } else {
                rec.quarantined = true;
                tagger.quarantine(&verdict.app_id);
                monitor.quarantine(&verdict.app_id);
                "quarantine"
            }
        } else {
            "log"
        };
        let entry = MitigationEntry {
            app_id: verdict.app_id.clone(),
            request_id: verdict.request_id.clone(),
            decision: verdict.decision,
            action,
        };
        self.events.push(
            AuditEvent::new("mano", "mitigation")
                .app(&entry.app_id)
                .request(&entry.request_id)
                .verdict(action)
                .reason(verdict.decision.as_str()),
        );
        self.mitigations.push(entry.clone());
        Some(entry)
    }
}
