//! Request tagger: authenticates requests and binds them to a mask and a
//! global counter.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::audit::AuditEvent;
use crate::authcode::{canonical_encode, mac_compute, mac_verify, AuthError, Counter, Field, MacBytes, MacKey};
use crate::controller::Intent;
use crate::policy::{AccessMask, ResourceId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("credential rejected for {0}")]
    AuthFailed(String),
    #[error("no access mask for {0}")]
    NoMask(String),
    #[error("{0} is quarantined")]
    Quarantined(String),
    #[error("{0} is revoked")]
    Revoked(String),
    #[error("{app_id} requested non-whitelisted resource {resource}")]
    ResourceNotWhitelisted { app_id: String, resource: ResourceId },
    #[error("mask for {0} already registered")]
    DuplicateMask(String),
    #[error(transparent)]
    Counter(#[from] AuthError),
}

impl TagError {
    pub fn code(&self) -> &'static str {
        match self {
            TagError::AuthFailed(_) => "auth_failed",
            TagError::NoMask(_) => "no_mask",
            TagError::Quarantined(_) => "quarantined",
            TagError::Revoked(_) => "revoked",
            TagError::ResourceNotWhitelisted { .. } => "resource_not_whitelisted",
            TagError::DuplicateMask(_) => "duplicate_mask",
            TagError::Counter(_) => "counter_overflow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppRequest {
    pub app_id: String,
    pub credential: String,
    pub intent: Intent,
    pub requested_resources: BTreeSet<ResourceId>,
}

impl AppRequest {
    /// Request whose declared resources are those the intent needs.
    pub fn new(app_id: &str, credential: &str, intent: Intent) -> Self {
        let requested_resources = intent.kind().required_resources();
        Self {
            app_id: app_id.to_string(),
            credential: credential.to_string(),
            intent,
            requested_resources,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TagRecord {
    pub app_id: String,
    pub request_id: String,
    #[serde(serialize_with = "hex32")]
    pub mask_digest: [u8; 32],
    pub counter: u64,
    #[serde(serialize_with = "hex32")]
    pub mac: MacBytes,
}

fn hex32<S: serde::Serializer>(b: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(b))
}

impl TagRecord {
    pub fn mac_input(app_id: &str, request_id: &str, mask_digest: &[u8; 32], counter: u64) -> Vec<u8> {
        canonical_encode(&[
            Field::Str(app_id),
            Field::Str(request_id),
            Field::Bytes(mask_digest),
            Field::U64(counter),
        ])
    }

    pub fn verify(&self, key: &MacKey) -> bool {
        let input = Self::mac_input(&self.app_id, &self.request_id, &self.mask_digest, self.counter);
        mac_verify(key, &input, &self.mac)
    }
}

/// What the controller receives: the untouched intent plus the mask, which
/// the controller may use for compilation but nobody downstream trusts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardedRequest {
    pub app_id: String,
    pub request_id: String,
    pub intent: Intent,
    pub mask: AccessMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Quarantined,
    Revoked,
}

#[derive(Debug)]
pub struct Tagger {
    key: MacKey,
    credentials: BTreeMap<String, String>,
    masks: BTreeMap<String, Vec<AccessMask>>,
    blocked: BTreeMap<String, Block>,
    last: Counter,
    issued: Vec<TagRecord>,
    events: Vec<AuditEvent>,
}

impl Tagger {
    pub fn new(key: MacKey) -> Self {
        Self {
            key,
            credentials: BTreeMap::new(),
            masks: BTreeMap::new(),
            blocked: BTreeMap::new(),
            last: Counter::start(),
            issued: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn register_credential(&mut self, app_id: &str, token: &str) {
        self.credentials.insert(app_id.to_string(), token.to_string());
    }

    /// Stores the primary mask for a freshly installed app.
    pub fn register_mask(&mut self, mask: AccessMask) -> Result<(), TagError> {
        if self.masks.contains_key(mask.app_id()) {
            return Err(TagError::DuplicateMask(mask.app_id().to_string()));
        }
        self.masks.insert(mask.app_id().to_string(), vec![mask]);
        Ok(())
    }

    /// Adds a delegated mask next to any mask the app already holds.
    pub fn add_delegated_mask(&mut self, mask: AccessMask) -> Result<(), TagError> {
        let list = self.masks.entry(mask.app_id().to_string()).or_default();
        if list.iter().any(|m| m.digest() == mask.digest()) {
            return Err(TagError::DuplicateMask(mask.app_id().to_string()));
        }
        list.push(mask);
        Ok(())
    }

    pub fn quarantine(&mut self, app_id: &str) {
        self.blocked.entry(app_id.to_string()).or_insert(Block::Quarantined);
    }

    pub fn revoke(&mut self, app_id: &str) {
        self.masks.remove(app_id);
        self.blocked.insert(app_id.to_string(), Block::Revoked);
    }

    pub fn masks(&self, app_id: &str) -> &[AccessMask] {
        self.masks.get(app_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn last_counter(&self) -> u64 {
        self.last.value
    }

    pub fn issued(&self) -> &[TagRecord] {
        &self.issued
    }

    pub fn take_events(&mut self) -> Vec<AuditEvent> {
        std::mem::take(&mut self.events)
    }

    fn check(&self, req: &AppRequest) -> Result<&AccessMask, TagError> {
        let app = &req.app_id;
        match self.credentials.get(app) {
            Some(token) if token == &req.credential => {}
            _ => return Err(TagError::AuthFailed(app.clone())),
        }
        match self.blocked.get(app) {
            Some(Block::Quarantined) => return Err(TagError::Quarantined(app.clone())),
            Some(Block::Revoked) => return Err(TagError::Revoked(app.clone())),
            None => {}
        }
        let masks = self
            .masks
            .get(app)
            .filter(|m| !m.is_empty())
            .ok_or_else(|| TagError::NoMask(app.clone()))?;
        let mut wanted: BTreeSet<&ResourceId> = req.requested_resources.iter().collect();
        let needed = req.intent.kind().required_resources();
        wanted.extend(needed.iter());
        if let Some(mask) = masks.iter().find(|m| wanted.iter().all(|r| m.tuple(r).is_some())) {
            return Ok(mask);
        }
        let granted: BTreeSet<&ResourceId> = masks.iter().flat_map(|m| m.resources()).collect();
        let resource = wanted
            .iter()
            .find(|r| !granted.contains(*r))
            .or_else(|| wanted.iter().next())
            .map(|r| (*r).clone())
            .expect("wanted set is non-empty when no mask covers it");
        Err(TagError::ResourceNotWhitelisted {
            app_id: app.clone(),
            resource,
        })
    }

    /// Tags one request. Failures consume no counter value.
    pub fn tag_request(&mut self, req: AppRequest) -> Result<(TagRecord, ForwardedRequest), TagError> {
        let mask = match self.check(&req) {
            Ok(m) => m.clone(),
            Err(e) => {
                self.events
                    .push(AuditEvent::new("tagger", "drop").app(&req.app_id).reason(e.code()));
                return Err(e);
            }
        };
        let counter = self.last.next_counter()?;
        self.last = counter;
        let request_id = format!("{}/{}", req.app_id, counter.value);
        let input = TagRecord::mac_input(&req.app_id, &request_id, mask.digest(), counter.value);
        let record = TagRecord {
            app_id: req.app_id.clone(),
            request_id: request_id.clone(),
            mask_digest: *mask.digest(),
            counter: counter.value,
            mac: mac_compute(&self.key, &input),
        };
        self.issued.push(record.clone());
        self.events.push(
            AuditEvent::new("tagger", "tagged")
                .app(&req.app_id)
                .request(&request_id)
                .counter(counter.value),
        );
        let forwarded = ForwardedRequest {
            app_id: req.app_id,
            request_id,
            intent: req.intent,
            mask,
        };
        Ok((record, forwarded))
    }
}
