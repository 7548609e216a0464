use std::collections::BTreeSet;

use serde::Serialize;

/// Reorder tolerance used unless a scenario overrides it.
pub const DEFAULT_WINDOW: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "step")]
pub enum WindowStep {
    /// Counter was the expected one. `released` are held counters that are
    /// now contiguous, ascending.
    InOrder {
        released: Vec<u64>,
    },
    Held,
    /// The arrival broke the window. `dropped` are the previously held
    /// counters, ascending; the arriving counter is rejected too.
    Invalidate {
        dropped: Vec<u64>,
    },
    /// Counter was skipped by an earlier invalidation.
    Invalidated,
    /// Counter already processed or already held.
    Stale,
}

/// Batch-granularity sliding window over the tagger's global counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    limit: u64,
    expected: u64,
    held: BTreeSet<u64>,
    invalidated: BTreeSet<u64>,
}

impl Default for Window {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl Window {
    pub fn new(limit: u64) -> Self {
        Self {
            limit,
            expected: 1,
            held: BTreeSet::new(),
            invalidated: BTreeSet::new(),
        }
    }

    pub fn expected(&self) -> u64 {
        self.expected
    }

    pub fn held(&self) -> &BTreeSet<u64> {
        &self.held
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    /// Feeds one arrival. `owner` maps a counter to the app its tag record
    /// names, or `None` when no record has been seen.
    pub fn arrive<'a>(&mut self, counter: u64, app_id: &str, owner: impl Fn(u64) -> Option<&'a str>) -> WindowStep {
        if self.invalidated.remove(&counter) {
            return WindowStep::Invalidated;
        }
        if counter < self.expected || self.held.contains(&counter) {
            return WindowStep::Stale;
        }
        if counter == self.expected {
            self.expected += 1;
            let mut released = Vec::new();
            while self.held.remove(&self.expected) {
                released.push(self.expected);
                self.expected += 1;
            }
            return WindowStep::InOrder { released };
        }
        let gap = counter - self.expected;
        let same_app = (self.expected..counter).all(|k| owner(k) == Some(app_id));
        if gap <= self.limit && same_app {
            self.held.insert(counter);
            return WindowStep::Held;
        }
        let top = self.held.last().copied().unwrap_or(counter).max(counter);
        for k in self.expected..=top {
            if k != counter && !self.held.contains(&k) {
                self.invalidated.insert(k);
            }
        }
        let dropped: Vec<u64> = std::mem::take(&mut self.held).into_iter().collect();
        self.expected = top + 1;
        WindowStep::Invalidate { dropped }
    }
}
