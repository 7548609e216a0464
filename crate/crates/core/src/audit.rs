//! JSON-lines audit trail stamped with a virtual clock.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEvent {
    pub t: u64,
    pub component: &'static str,
    pub event: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub app_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counter: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl AuditEvent {
    pub fn new(component: &'static str, event: impl Into<String>) -> Self {
        Self {
            t: 0,
            component,
            event: event.into(),
            app_id: None,
            request_id: None,
            counter: None,
            verdict: None,
            reason: None,
        }
    }

    pub fn app(mut self, app_id: &str) -> Self {
        self.app_id = Some(app_id.to_string());
        self
    }

    pub fn request(mut self, request_id: &str) -> Self {
        self.request_id = Some(request_id.to_string());
        self
    }

    pub fn counter(mut self, counter: u64) -> Self {
        self.counter = Some(counter);
        self
    }

    pub fn verdict(mut self, verdict: impl Into<String>) -> Self {
        self.verdict = Some(verdict.into());
        self
    }

    pub fn reason(mut self, reason: impl Into<String>) -> Self {
        self.reason = Some(reason.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditLog {
    clock: u64,
    events: Vec<AuditEvent>,
}

impl AuditLog {
    pub fn record(&mut self, mut event: AuditEvent) {
        event.t = self.clock;
        self.clock += 1;
        self.events.push(event);
    }

    pub fn extend(&mut self, events: impl IntoIterator<Item = AuditEvent>) {
        for e in events {
            self.record(e);
        }
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn now(&self) -> u64 {
        self.clock
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("audit event serializes"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clock_and_jsonl() {
        let mut log = AuditLog::default();
        log.record(AuditEvent::new("tagger", "tagged").app("a").counter(1));
        log.record(AuditEvent::new("monitor", "verdict").verdict("accept"));
        let text = log.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"t":0,"component":"tagger","event":"tagged","app_id":"a","counter":1}"#
        );
        assert!(lines[1].starts_with(r#"{"t":1,"#));
    }
}
