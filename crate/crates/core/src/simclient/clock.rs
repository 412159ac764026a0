use std::collections::BTreeMap;

use crate::protocol::{PendingTimer, TimerKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledTimer {
    pub hash: String,
    pub delay: u64,
    pub kind: TimerKind,
}

/// Deterministic stand-in for wall-clock timers.
///
/// Timers fire in `(fire time, insertion order)` order, so ties resolve
/// first-scheduled-first. Time only moves forward.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now_ms: u64,
    next_order: u64,
    scheduled: BTreeMap<(u64, u64), ScheduledTimer>,
}

impl VirtualClock {
    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    /// Moves time forward to `t`; earlier values are ignored.
    pub fn advance_to(&mut self, t: u64) {
        self.now_ms = self.now_ms.max(t);
    }

    pub fn schedule(&mut self, fire_at: u64, timer: ScheduledTimer) {
        self.scheduled.insert((fire_at, self.next_order), timer);
        self.next_order += 1;
    }

    /// Removes and returns the earliest timer due at or before `until`,
    /// moving the clock to its fire time.
    pub fn pop_due(&mut self, until: u64) -> Option<(u64, ScheduledTimer)> {
        let (&key, _) = self.scheduled.iter().next()?;
        if key.0 > until {
            return None;
        }
        let timer = self.scheduled.remove(&key).expect("key just observed");
        self.advance_to(key.0);
        Some((key.0, timer))
    }

    pub fn clear(&mut self) {
        self.scheduled.clear();
    }

    pub fn len(&self) -> usize {
        self.scheduled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scheduled.is_empty()
    }

    /// Scheduled timers in firing order, with their fire times.
    pub fn scheduled(&self) -> impl Iterator<Item = (u64, &ScheduledTimer)> {
        self.scheduled.iter().map(|((at, _), t)| (*at, t))
    }

    /// The pending list sent with a promote request: original delays, not
    /// time remaining.
    pub fn pending(&self) -> Vec<PendingTimer> {
        self.scheduled
            .values()
            .map(|t| PendingTimer { hash: t.hash.clone(), delay: t.delay, kind: t.kind })
            .collect()
    }
}
