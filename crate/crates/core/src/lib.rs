//! Access control for a north-bound SDN controller API: access masks built
//! from manifests and operator rules, a request tagger, a reference monitor in
//! front of the NIB, and a deterministic mock controller to drive them.

pub mod audit;
pub mod authcode;
pub mod controller;
pub mod harness;
pub mod mano;
pub mod monitor;
pub mod nib;
pub mod pipeline;
pub mod policy;
pub mod tagger;
