//! Wires tagger, controller, monitor, NIB and MANO into one deterministic
//! pipeline. Each stage is exposed so tests can tamper between them.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::audit::{AuditEvent, AuditLog};
use crate::authcode::NonceSource;
use crate::controller::{Batch, Controller, Fault};
use crate::mano::{
    default_catalogue, provision_keys, AppRecord, Keys, Mano, ManoError, MitigationPolicy, RevocationSummary,
};
use crate::monitor::{Monitor, Release, Verdict, DEFAULT_WINDOW};
use crate::nib::{Nib, NibError, NibSnapshot, QueryResult, SealedQuery};
use crate::policy::{AccessMask, AccessModel, ResourceAccessRule, ResourceId};
use crate::tagger::{AppRequest, ForwardedRequest, TagError, TagRecord, Tagger};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub window: u64,
    pub mitigation: MitigationPolicy,
    pub catalogue: BTreeSet<ResourceId>,
    /// Fixed key material instead of seed-derived keys.
    pub keys: Option<Keys>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window: DEFAULT_WINDOW,
            mitigation: MitigationPolicy::default(),
            catalogue: default_catalogue(),
            keys: None,
        }
    }
}

/// Result of pushing one request through every stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestOutcome {
    Dropped(TagError),
    /// Tagged; `verdicts` holds whatever became final while pumping.
    Tagged {
        record: TagRecord,
        verdicts: Vec<Verdict>,
    },
}

#[derive(Debug)]
pub struct Pipeline {
    pub mano: Mano,
    pub tagger: Tagger,
    pub controller: Controller,
    pub monitor: Monitor,
    pub nib: Nib,
    pub audit: AuditLog,
    keys: Keys,
    catalogue: BTreeSet<ResourceId>,
}

impl Pipeline {
    pub fn new(topology: NibSnapshot, config: PipelineConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        // Always draw the seed-derived keys so the other streams do not
        // depend on whether keys were configured.
        let derived = provision_keys(&mut rng);
        let keys = config.keys.clone().unwrap_or(derived);
        let nonce_rng = ChaCha20Rng::from_rng(&mut rng).expect("chacha reseed");
        let mano_rng = ChaCha20Rng::from_rng(&mut rng).expect("chacha reseed");
        let mut audit = AuditLog::default();
        audit.record(AuditEvent::new("mano", "keys_provisioned").reason(format!("seed {}", config.seed)));
        Self {
            mano: Mano::new(config.mitigation, mano_rng),
            tagger: Tagger::new(keys.k.clone()),
            controller: Controller::new(),
            monitor: Monitor::new(
                keys.k.clone(),
                keys.k_nib.clone(),
                config.window,
                NonceSource::new(nonce_rng),
            ),
            nib: Nib::new(topology, keys.k_nib.clone()),
            audit,
            keys,
            catalogue: config.catalogue,
        }
    }

    pub fn keys(&self) -> &Keys {
        &self.keys
    }

    fn collect_events(&mut self) {
        self.audit.extend(self.mano.take_events());
        self.audit.extend(self.tagger.take_events());
        self.audit.extend(self.monitor.take_events());
    }

    pub fn enroll(
        &mut self,
        manifest_doc: &str,
        model: AccessModel,
        rules: &[ResourceAccessRule],
    ) -> Result<AppRecord, ManoError> {
        let r = self.mano.enroll(
            manifest_doc,
            model,
            rules,
            &self.catalogue,
            &mut self.tagger,
            &mut self.monitor,
        );
        self.collect_events();
        r
    }

    pub fn delegate(&mut self, from: &str, to: &str, subset: &[usize]) -> Result<AccessMask, ManoError> {
        let r = self
            .mano
            .delegate(from, to, subset, &mut self.tagger, &mut self.monitor);
        self.collect_events();
        r
    }

    pub fn terminate(&mut self, app_id: &str) -> Result<RevocationSummary, ManoError> {
        let r = self.mano.terminate(app_id, &mut self.tagger, &mut self.monitor);
        self.collect_events();
        r
    }

    /// Request built with the credential MANO issued (empty if none).
    pub fn request_for(&self, app_id: &str, intent: crate::controller::Intent) -> AppRequest {
        let cred = self.mano.credential(app_id).unwrap_or_default().to_string();
        AppRequest::new(app_id, &cred, intent)
    }

    pub fn tag(&mut self, req: AppRequest) -> Result<(TagRecord, ForwardedRequest), TagError> {
        let r = self.tagger.tag_request(req);
        self.collect_events();
        r
    }

    pub fn deliver_tag(&mut self, record: TagRecord) -> bool {
        let ok = self.monitor.receive_tag_record(record).is_ok();
        self.collect_events();
        ok
    }

    pub fn submit(&mut self, fwd: ForwardedRequest) {
        self.audit.record(
            AuditEvent::new("controller", "submitted")
                .app(&fwd.app_id)
                .request(&fwd.request_id)
                .reason(fwd.intent.kind().name()),
        );
        self.controller.submit(fwd);
    }

    pub fn inject_fault(&mut self, fault: Fault) {
        let name = serde_json::to_value(&fault)
            .ok()
            .and_then(|v| v.get("mode").and_then(|m| m.as_str()).map(str::to_string))
            .unwrap_or_default();
        self.audit
            .record(AuditEvent::new("controller", "fault_armed").reason(name));
        self.controller.inject_fault(fault);
    }

    pub fn emit(&mut self) -> Vec<Batch> {
        self.controller.emit_to_monitor(self.nib.view())
    }

    /// Hands one batch to the monitor, executes what it releases on the
    /// NIB, and feeds verdicts back to the controller and MANO.
    pub fn deliver_batch(&mut self, batch: &Batch) -> Vec<Verdict> {
        self.audit.record(
            AuditEvent::new("controller", "emitted")
                .app(&batch.app_id)
                .request(&batch.request_id)
                .reason(format!("{} queries", batch.queries.len())),
        );
        let releases = self.monitor.verify_batch(batch, self.nib.view());
        self.collect_events();
        let mut verdicts = Vec::new();
        for Release { verdict, sealed } in releases {
            for sq in &sealed {
                let _ = self.execute_sealed(sq);
            }
            self.controller.on_verdict(&verdict.request_id, verdict.accepted());
            self.mano
                .handle_mitigation(&verdict, &mut self.tagger, &mut self.monitor);
            self.collect_events();
            verdicts.push(verdict);
        }
        verdicts
    }

    pub fn execute_sealed(&mut self, sq: &SealedQuery) -> Result<QueryResult, NibError> {
        let r = self.nib.execute(sq);
        let ev = AuditEvent::new("nib", "execute")
            .app(&sq.query.app_id)
            .request(&sq.query.request_id)
            .reason(sq.query.op.as_str());
        self.audit.record(match &r {
            Ok(_) => ev.verdict("executed"),
            Err(e) => ev.verdict("dropped").reason(e.to_string()),
        });
        r
    }

    /// Compiles and delivers everything the controller has queued.
    pub fn pump(&mut self) -> Vec<Verdict> {
        let batches = self.emit();
        batches.iter().flat_map(|b| self.deliver_batch(b)).collect()
    }

    /// Releases batches the controller held back, then delivers them.
    pub fn flush(&mut self) -> Vec<Verdict> {
        let mut verdicts = self.pump();
        let held = self.controller.flush();
        for b in &held {
            verdicts.extend(self.deliver_batch(b));
        }
        verdicts
    }

    /// Full path for one application request.
    pub fn request(&mut self, req: AppRequest) -> RequestOutcome {
        match self.tag(req) {
            Err(e) => RequestOutcome::Dropped(e),
            Ok((record, fwd)) => {
                self.deliver_tag(record.clone());
                self.submit(fwd);
                RequestOutcome::Tagged {
                    record,
                    verdicts: self.pump(),
                }
            }
        }
    }
}
