//! Untrusted mock network controller.
//!
//! Requests are compiled in FIFO order unless a fault injected through the
//! harness says otherwise. The controller has no handle on the NIB; its only
//! output is batches for the reference monitor.

mod compile;
mod intent;
mod query;
mod state;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

pub use compile::{compile, shortest_path, CompileError};
pub use intent::{Intent, IntentKind};
pub use query::{Batch, Query, QueryOp, Target};
pub use state::{step_state, IntentEvent, IntentMachine, IntentState, TransitionError, MAX_RETRIES};

use crate::nib::NibSnapshot;
use crate::policy::AccessMask;
use crate::tagger::ForwardedRequest;

/// Misbehaviour the harness can make the controller exhibit. Each compiled
/// batch consumes at most one fault from the front of the queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Fault {
    /// Hold the batch back until `k` later batches have gone out.
    Delay {
        k: usize,
    },
    /// Collect this and the next `perm.len() - 1` batches, then emit them
    /// so that position `i` carries collected batch `perm[i]`.
    Reorder {
        perm: Vec<usize>,
    },
    /// Append a query. Empty app/request ids take the batch's own.
    ForgeExtra {
        query: Query,
    },
    DropBatch,
    /// Compile with the last mask seen for another app.
    SwapMask {
        app_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FaultRecord {
    pub request_id: String,
    pub fault: Fault,
}

#[derive(Debug, Clone)]
struct Pending {
    fwd: ForwardedRequest,
}

#[derive(Debug, Default)]
pub struct Controller {
    queue: VecDeque<Pending>,
    faults: VecDeque<Fault>,
    delayed: Vec<(usize, Batch)>,
    group: Option<(Vec<usize>, Vec<Batch>)>,
    machines: BTreeMap<String, IntentMachine>,
    withdraw_targets: BTreeMap<String, String>,
    seen_masks: BTreeMap<String, AccessMask>,
    fault_log: Vec<FaultRecord>,
}

impl Controller {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn submit(&mut self, fwd: ForwardedRequest) {
        let mut machine = IntentMachine::new();
        machine
            .fire(IntentEvent::TaggedQueryRequest)
            .expect("fresh intent accepts tagged request");
        self.machines.insert(fwd.request_id.clone(), machine);
        if let IntentKind::Withdraw { request_id } = fwd.intent.kind() {
            self.withdraw_targets.insert(fwd.request_id.clone(), request_id.clone());
        }
        self.seen_masks.insert(fwd.app_id.clone(), fwd.mask.clone());
        self.queue.push_back(Pending { fwd });
    }

    pub fn inject_fault(&mut self, fault: Fault) {
        self.faults.push_back(fault);
    }

    pub fn pending_faults(&self) -> usize {
        self.faults.len()
    }

    pub fn fault_log(&self) -> &[FaultRecord] {
        &self.fault_log
    }

    pub fn state(&self, request_id: &str) -> Option<IntentState> {
        self.machines.get(request_id).map(IntentMachine::state)
    }

    pub fn machine(&self, request_id: &str) -> Option<&IntentMachine> {
        self.machines.get(request_id)
    }

    fn fire(&mut self, request_id: &str, event: IntentEvent) {
        if let Some(m) = self.machines.get_mut(request_id) {
            // Out-of-order events from a faulty schedule are ignored.
            let _ = m.fire(event);
        }
    }

    fn compile_one(&mut self, p: Pending, view: &NibSnapshot) -> Option<Batch> {
        let ForwardedRequest {
            app_id,
            request_id,
            intent,
            mask,
        } = p.fwd;
        let mut fault = self.faults.pop_front();
        if let Some(f) = &fault {
            self.fault_log.push(FaultRecord {
                request_id: request_id.clone(),
                fault: f.clone(),
            });
        }
        let mask = match &fault {
            Some(Fault::SwapMask { app_id: other }) => {
                let swapped = self.seen_masks.get(other).cloned().unwrap_or(mask);
                fault = None;
                swapped
            }
            _ => mask,
        };
        self.fire(&request_id, IntentEvent::SubmitForCompilation);
        let mut queries = match compile(&app_id, &request_id, &intent, &mask, view) {
            Ok(q) => {
                self.fire(&request_id, IntentEvent::CompileSucceeded);
                self.fire(&request_id, IntentEvent::InstallSucceeded);
                q
            }
            Err(_) => {
                // Compilation is deterministic, so retries fail the same way.
                // An empty batch keeps the monitor's counter sequence intact.
                self.fire(&request_id, IntentEvent::CompileFailed);
                for _ in 0..MAX_RETRIES {
                    self.fire(&request_id, IntentEvent::RetryCompile);
                    self.fire(&request_id, IntentEvent::CompileFailed);
                }
                Vec::new()
            }
        };
        match fault {
            Some(Fault::ForgeExtra { query }) => {
                let mut q = query;
                if q.app_id.is_empty() {
                    q.app_id = app_id.clone();
                }
                if q.request_id.is_empty() {
                    q.request_id = request_id.clone();
                }
                queries.push(q);
            }
            Some(Fault::DropBatch) => return None,
            Some(Fault::Delay { k }) => {
                self.delayed.push((
                    k,
                    Batch {
                        app_id,
                        request_id,
                        queries,
                    },
                ));
                return None;
            }
            Some(Fault::Reorder { perm }) if perm.len() > 1 && self.group.is_none() => {
                self.group = Some((perm, Vec::new()));
            }
            _ => {}
        }
        Some(Batch {
            app_id,
            request_id,
            queries,
        })
    }

    fn push_out(&mut self, batch: Batch, out: &mut Vec<Batch>) {
        if let Some((perm, collected)) = &mut self.group {
            collected.push(batch);
            if collected.len() == perm.len() {
                let (perm, collected) = self.group.take().expect("group present");
                let mut slots: Vec<Option<Batch>> = collected.into_iter().map(Some).collect();
                let mut order: Vec<Batch> = perm.iter().filter_map(|&i| slots.get_mut(i)?.take()).collect();
                order.extend(slots.into_iter().flatten());
                for b in order {
                    self.emit(b, out);
                }
            }
            return;
        }
        self.emit(batch, out);
    }

    fn emit(&mut self, batch: Batch, out: &mut Vec<Batch>) {
        out.push(batch);
        let mut due = Vec::new();
        for (k, _) in &mut self.delayed {
            *k = k.saturating_sub(1);
        }
        let mut i = 0;
        while i < self.delayed.len() {
            if self.delayed[i].0 == 0 {
                due.push(self.delayed.remove(i).1);
            } else {
                i += 1;
            }
        }
        for b in due {
            self.emit(b, out);
        }
    }

    /// Compiles everything queued and returns the batches due for the
    /// monitor, in emission order.
    pub fn emit_to_monitor(&mut self, view: &NibSnapshot) -> Vec<Batch> {
        let mut out = Vec::new();
        while let Some(p) = self.queue.pop_front() {
            if let Some(batch) = self.compile_one(p, view) {
                self.push_out(batch, &mut out);
            }
        }
        out
    }

    /// Releases every held-back batch: delayed ones, then an unfinished
    /// reorder group, each in the order they were compiled.
    pub fn flush(&mut self) -> Vec<Batch> {
        let mut out: Vec<Batch> = self.delayed.drain(..).map(|(_, b)| b).collect();
        if let Some((_, collected)) = self.group.take() {
            out.extend(collected);
        }
        out
    }

    /// Reference-monitor decision for an emitted batch.
    pub fn on_verdict(&mut self, request_id: &str, accepted: bool) {
        if self.state(request_id) != Some(IntentState::RefMonitor) {
            return;
        }
        if accepted {
            self.fire(request_id, IntentEvent::VerifyAccessCompliance);
            if let Some(target) = self.withdraw_targets.get(request_id).cloned() {
                self.fire(&target, IntentEvent::WithdrawalInstalled);
                self.fire(&target, IntentEvent::WithdrawCompleted);
            }
        } else {
            self.fire(request_id, IntentEvent::RefMonitorRejected);
        }
    }
}
