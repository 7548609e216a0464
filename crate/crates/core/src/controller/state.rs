//! Intent lifecycle, extended with the tagger and reference-monitor states.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attempts allowed for each retry edge before the intent stays put.
pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IntentState {
    RequestTagger,
    InstallRequest,
    Compiling,
    Installing,
    RefMonitor,
    Installed,
    Recompiling,
    Failed,
    Withdrawing,
    Withdrawn,
}

impl IntentState {
    pub const ALL: [IntentState; 10] = [
        IntentState::RequestTagger,
        IntentState::InstallRequest,
        IntentState::Compiling,
        IntentState::Installing,
        IntentState::RefMonitor,
        IntentState::Installed,
        IntentState::Recompiling,
        IntentState::Failed,
        IntentState::Withdrawing,
        IntentState::Withdrawn,
    ];
}

/// Numbered edges of the lifecycle diagram, plus the completion of a
/// withdrawal which the diagram leaves unnumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum IntentEvent {
    ApplicationRequest,
    TaggedQueryRequest,
    SubmitForCompilation,
    CompileSucceeded,
    InstallSucceeded,
    VerifyAccessCompliance,
    WithdrawalInstalled,
    RemoveTopoOrFlowEvent,
    AddUpdateTopoEvent,
    CompileFailed,
    RetryCompile,
    InstallFailed,
    RetryInstall,
    CompileFailedOrSameResult,
    WithdrawalOfFailed,
    RefMonitorRejected,
    RetryInstallIntent,
    WithdrawCompleted,
}

impl IntentEvent {
    pub const ALL: [IntentEvent; 18] = [
        IntentEvent::ApplicationRequest,
        IntentEvent::TaggedQueryRequest,
        IntentEvent::SubmitForCompilation,
        IntentEvent::CompileSucceeded,
        IntentEvent::InstallSucceeded,
        IntentEvent::VerifyAccessCompliance,
        IntentEvent::WithdrawalInstalled,
        IntentEvent::RemoveTopoOrFlowEvent,
        IntentEvent::AddUpdateTopoEvent,
        IntentEvent::CompileFailed,
        IntentEvent::RetryCompile,
        IntentEvent::InstallFailed,
        IntentEvent::RetryInstall,
        IntentEvent::CompileFailedOrSameResult,
        IntentEvent::WithdrawalOfFailed,
        IntentEvent::RefMonitorRejected,
        IntentEvent::RetryInstallIntent,
        IntentEvent::WithdrawCompleted,
    ];

    /// Edge number in the diagram; `None` for the unnumbered completion.
    pub fn number(self) -> Option<u8> {
        let n = self as u8 + 1;
        (n <= 17).then_some(n)
    }

    fn is_retry(self) -> bool {
        matches!(
            self,
            IntentEvent::RetryCompile | IntentEvent::RetryInstall | IntentEvent::RetryInstallIntent
        )
    }
}

impl fmt::Display for IntentEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.number() {
            Some(n) => write!(f, "({n}) {self:?}"),
            None => write!(f, "{self:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("illegal transition {event} from {state:?}")]
    Illegal { state: IntentState, event: IntentEvent },
    #[error("{event} already attempted {MAX_RETRIES} times")]
    RetriesExhausted { event: IntentEvent },
}

/// Pure transition function.
pub fn step_state(state: IntentState, event: IntentEvent) -> Result<IntentState, TransitionError> {
    use IntentEvent as E;
    use IntentState as S;
    let next = match (state, event) {
        (S::RequestTagger, E::TaggedQueryRequest) => S::InstallRequest,
        (S::InstallRequest, E::SubmitForCompilation) => S::Compiling,
        (S::Compiling | S::Recompiling, E::CompileSucceeded) => S::Installing,
        (S::Installing, E::InstallSucceeded) => S::RefMonitor,
        (S::RefMonitor, E::VerifyAccessCompliance) => S::Installed,
        (S::Installed, E::WithdrawalInstalled) => S::Withdrawing,
        (S::Installed, E::RemoveTopoOrFlowEvent) => S::Recompiling,
        (S::Failed, E::AddUpdateTopoEvent) => S::Recompiling,
        (S::Compiling, E::CompileFailed) => S::Failed,
        (S::Failed, E::RetryCompile) => S::Compiling,
        (S::Installing, E::InstallFailed) => S::Failed,
        (S::Failed, E::RetryInstall) => S::Installing,
        (S::Recompiling, E::CompileFailedOrSameResult) => S::Installed,
        (S::Failed, E::WithdrawalOfFailed) => S::Withdrawing,
        (S::RefMonitor, E::RefMonitorRejected) => S::Failed,
        (S::Withdrawn, E::RetryInstallIntent) => S::InstallRequest,
        (S::Withdrawing, E::WithdrawCompleted) => S::Withdrawn,
        _ => return Err(TransitionError::Illegal { state, event }),
    };
    Ok(next)
}

/// One intent's lifecycle with bounded retries and a transition history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntentMachine {
    state: IntentState,
    retries: BTreeMap<IntentEvent, u32>,
    history: Vec<(IntentEvent, IntentState)>,
}

impl Default for IntentMachine {
    fn default() -> Self {
        Self::new()
    }
}

impl IntentMachine {
    /// An application request has just arrived at the tagger.
    pub fn new() -> Self {
        Self {
            state: IntentState::RequestTagger,
            retries: BTreeMap::new(),
            history: vec![(IntentEvent::ApplicationRequest, IntentState::RequestTagger)],
        }
    }

    pub fn state(&self) -> IntentState {
        self.state
    }

    pub fn history(&self) -> &[(IntentEvent, IntentState)] {
        &self.history
    }

    pub fn fire(&mut self, event: IntentEvent) -> Result<IntentState, TransitionError> {
        let next = step_state(self.state, event)?;
        if event.is_retry() {
            let used = self.retries.entry(event).or_default();
            if *used >= MAX_RETRIES {
                return Err(TransitionError::RetriesExhausted { event });
            }
            *used += 1;
        }
        self.state = next;
        self.history.push((event, next));
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn happy_path_passes_reference_monitor() {
        let mut m = IntentMachine::new();
        for e in [
            IntentEvent::TaggedQueryRequest,
            IntentEvent::SubmitForCompilation,
            IntentEvent::CompileSucceeded,
            IntentEvent::InstallSucceeded,
        ] {
            m.fire(e).unwrap();
        }
        assert_eq!(m.state(), IntentState::RefMonitor);
        assert_eq!(
            m.fire(IntentEvent::VerifyAccessCompliance).unwrap(),
            IntentState::Installed
        );
    }

    #[test]
    fn retries_are_bounded() {
        let mut m = IntentMachine::new();
        for e in [
            IntentEvent::TaggedQueryRequest,
            IntentEvent::SubmitForCompilation,
            IntentEvent::CompileFailed,
        ] {
            m.fire(e).unwrap();
        }
        for _ in 0..MAX_RETRIES {
            m.fire(IntentEvent::RetryCompile).unwrap();
            m.fire(IntentEvent::CompileFailed).unwrap();
        }
        assert_eq!(
            m.fire(IntentEvent::RetryCompile),
            Err(TransitionError::RetriesExhausted {
                event: IntentEvent::RetryCompile
            })
        );
        assert_eq!(m.state(), IntentState::Failed);
    }

    #[test]
    fn event_numbers() {
        assert_eq!(IntentEvent::ApplicationRequest.number(), Some(1));
        assert_eq!(IntentEvent::RefMonitorRejected.number(), Some(16));
        assert_eq!(IntentEvent::RetryInstallIntent.number(), Some(17));
        assert_eq!(IntentEvent::WithdrawCompleted.number(), None);
    }
}
