//! Keyed MACs, counters, nonces and the canonical byte encoding that every
//! MAC input goes through.
//!
//! Encoding layout: each field is `tag (1 byte) || len (u32 BE) || payload`.
//! Action sets are emitted in enum order and mask tuples in resource-id
//! order, so logically equal inputs always produce identical bytes.

use std::collections::BTreeSet;
use std::fmt;

use hmac::{Hmac, Mac};
use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::policy::{Action, AttributeConstraint, MaskTuple, ResourceAccessRule};

type HmacSha256 = Hmac<Sha256>;

pub const KEY_LEN: usize = 32;
pub const MAC_LEN: usize = 32;
pub const NONCE_LEN: usize = 16;

pub type MacBytes = [u8; MAC_LEN];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("key {key_id} must be {KEY_LEN} bytes, got {len}")]
    KeyLength { key_id: String, len: usize },
    #[error("key {0} is not valid hex")]
    KeyHex(String),
    #[error("counter overflow")]
    CounterOverflow,
}

/// Shared secret for one authenticated channel (`K` or `K_NIB`).
#[derive(Clone, PartialEq, Eq)]
pub struct MacKey {
    key_id: String,
    bytes: [u8; KEY_LEN],
}

impl MacKey {
    pub fn new(key_id: impl Into<String>, bytes: &[u8]) -> Result<Self, AuthError> {
        let key_id = key_id.into();
        let bytes: [u8; KEY_LEN] = bytes.try_into().map_err(|_| AuthError::KeyLength {
            key_id: key_id.clone(),
            len: bytes.len(),
        })?;
        Ok(Self { key_id, bytes })
    }

    pub fn from_hex(key_id: impl Into<String>, hex_str: &str) -> Result<Self, AuthError> {
        let key_id = key_id.into();
        let raw = hex::decode(hex_str.trim()).map_err(|_| AuthError::KeyHex(key_id.clone()))?;
        Self::new(key_id, &raw)
    }

    pub fn generate(key_id: impl Into<String>, rng: &mut ChaCha20Rng) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Self {
            key_id: key_id.into(),
            bytes,
        }
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }
}

// Key material stays out of logs and reports.
impl fmt::Debug for MacKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MacKey")
            .field("key_id", &self.key_id)
            .finish_non_exhaustive()
    }
}

/// HMAC-SHA-256 over `message`.
pub fn mac_compute(key: &MacKey, message: &[u8]) -> MacBytes {
    hmac_raw(&key.bytes, message)
}

/// Constant-time check of `mac` against `message`.
pub fn mac_verify(key: &MacKey, message: &[u8], mac: &[u8]) -> bool {
    let mut m = <HmacSha256 as Mac>::new_from_slice(&key.bytes).expect("any key length");
    m.update(message);
    m.verify_slice(mac).is_ok()
}

pub(crate) fn hmac_raw(key: &[u8], message: &[u8]) -> MacBytes {
    let mut m = <HmacSha256 as Mac>::new_from_slice(key).expect("any key length");
    m.update(message);
    m.finalize().into_bytes().into()
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Per-tagger sequence number. Never reused within a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Counter {
    pub value: u64,
}

impl Counter {
    pub const fn start() -> Self {
        Counter { value: 0 }
    }

    pub fn next_counter(self) -> Result<Counter, AuthError> {
        self.value
            .checked_add(1)
            .map(|value| Counter { value })
            .ok_or(AuthError::CounterOverflow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nonce(pub [u8; NONCE_LEN]);

impl Nonce {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl Serialize for Nonce {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

/// Seeded nonce generator; one per scenario so runs replay exactly.
#[derive(Debug, Clone)]
pub struct NonceSource {
    rng: ChaCha20Rng,
}

impl NonceSource {
    pub fn new(rng: ChaCha20Rng) -> Self {
        Self { rng }
    }

    pub fn fresh(&mut self) -> Nonce {
        let mut n = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut n);
        Nonce(n)
    }
}

/// One typed value fed to [`canonical_encode`].
#[derive(Debug, Clone, Copy)]
pub enum Field<'a> {
    Str(&'a str),
    Bytes(&'a [u8]),
    U64(u64),
    Actions(&'a BTreeSet<Action>),
    Tuples(&'a [MaskTuple]),
}

impl Field<'_> {
    fn tag(&self) -> u8 {
        match self {
            Field::Str(_) => 1,
            Field::Bytes(_) => 2,
            Field::U64(_) => 3,
            Field::Actions(_) => 4,
            Field::Tuples(_) => 5,
        }
    }
}

pub fn canonical_encode(fields: &[Field<'_>]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in fields {
        encode_field(&mut out, f);
    }
    out
}

fn put_prefixed(out: &mut Vec<u8>, tag: u8, payload: &[u8]) {
    out.push(tag);
    let len = u32::try_from(payload.len()).expect("field longer than 4 GiB");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(payload);
}

fn encode_field(out: &mut Vec<u8>, field: &Field<'_>) {
    let tag = field.tag();
    match field {
        Field::Str(s) => put_prefixed(out, tag, s.as_bytes()),
        Field::Bytes(b) => put_prefixed(out, tag, b),
        Field::U64(v) => put_prefixed(out, tag, &v.to_be_bytes()),
        Field::Actions(set) => {
            let payload: Vec<u8> = set.iter().map(|a| a.ordinal()).collect();
            put_prefixed(out, tag, &payload);
        }
        Field::Tuples(tuples) => {
            let mut sorted: Vec<&MaskTuple> = tuples.iter().collect();
            sorted.sort_by(|a, b| a.resource.cmp(&b.resource));
            let mut payload = Vec::new();
            for t in sorted {
                let rules = encode_rules(&t.rules);
                let inner = canonical_encode(&[
                    Field::Str(t.resource.as_str()),
                    Field::Actions(&t.actions),
                    Field::Bytes(&rules),
                ]);
                put_prefixed(&mut payload, 0, &inner);
            }
            put_prefixed(out, tag, &payload);
        }
    }
}

fn encode_constraint(c: &AttributeConstraint) -> Vec<u8> {
    let mut values = Vec::new();
    for v in &c.values {
        encode_field(&mut values, &Field::Str(v));
    }
    canonical_encode(&[
        Field::U64(u64::from(c.attribute.ordinal())),
        Field::U64(c.comparator as u64),
        Field::Bytes(&values),
    ])
}

fn encode_rules(rules: &[ResourceAccessRule]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rules {
        let mut constraints = Vec::new();
        for c in &r.constraints {
            encode_field(&mut constraints, &Field::Bytes(&encode_constraint(c)));
        }
        let actions = match &r.actions {
            Some(set) => canonical_encode(&[Field::U64(1), Field::Actions(set)]),
            None => canonical_encode(&[Field::U64(0)]),
        };
        let inner = canonical_encode(&[
            Field::Str(&r.rule_id),
            Field::Str(r.resource.as_str()),
            Field::Bytes(&constraints),
            Field::Bytes(&actions),
        ]);
        encode_field(&mut out, &Field::Bytes(&inner));
    }
    out
}
