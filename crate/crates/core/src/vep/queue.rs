use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::types::{SimTime, SpId, StationId, VeeExtension};

/// Queue length at which a warning is logged once.
pub const DEFAULT_WARN_THRESHOLD: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueuedVee {
    pub vee_seq: u64,
    pub ext: VeeExtension,
    pub enqueued_at: SimTime,
    /// Entries ahead of this one when it was enqueued.
    pub j: usize,
    /// Enqueued at the instant of one of our own transmissions, so the
    /// wait is a whole period rather than a residual one.
    pub tx_aligned: bool,
}

/// One passive extension that left the queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueRecord {
    pub station: u32,
    pub vee_seq: u64,
    pub sp_id: u16,
    pub j: usize,
    pub enqueue_ms: f64,
    pub tx_ms: f64,
    pub delay_ms: f64,
    pub tx_aligned: bool,
}

/// FIFO of passive extensions waiting for an eligible outgoing message.
#[derive(Debug, Clone)]
pub struct ExtensionQueue {
    station: StationId,
    entries: VecDeque<QueuedVee>,
    next_seq: u64,
    warn_threshold: usize,
    hard_cap: Option<usize>,
    warned: bool,
    dropped: u64,
    last_tx: Option<SimTime>,
    trace: Vec<QueueRecord>,
}

impl ExtensionQueue {
    pub fn new(station: StationId) -> Self {
        ExtensionQueue {
            station,
            entries: VecDeque::new(),
            next_seq: 0,
            warn_threshold: DEFAULT_WARN_THRESHOLD,
            hard_cap: None,
            warned: false,
            dropped: 0,
            last_tx: None,
            trace: Vec::new(),
        }
    }

    pub fn with_limits(mut self, warn_threshold: usize, hard_cap: Option<usize>) -> Self {
        self.warn_threshold = warn_threshold;
        self.hard_cap = hard_cap;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head(&self) -> Option<&QueuedVee> {
        self.entries.front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedVee> {
        self.entries.iter()
    }

    /// Extensions dropped by the hard cap.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn enqueue(&mut self, ext: VeeExtension, now: SimTime) -> u64 {
        if let Some(cap) = self.hard_cap {
            while self.entries.len() >= cap.max(1) {
                self.entries.pop_front();
                self.dropped += 1;
            }
        }
        let vee_seq = self.next_seq;
        self.next_seq += 1;
        let j = self.entries.len();
        self.entries.push_back(QueuedVee {
            vee_seq,
            ext,
            enqueued_at: now,
            j,
            tx_aligned: self.last_tx == Some(now),
        });
        if self.entries.len() >= self.warn_threshold && !self.warned {
            self.warned = true;
            log::warn!(
                "{}: extension queue reached {} entries",
                self.station,
                self.entries.len()
            );
        }
        vee_seq
    }

    /// Notes that the station sent a message at `now`.
    pub fn note_transmission(&mut self, now: SimTime) {
        self.last_tx = Some(now);
    }

    /// Removes the head and records its queueing delay.
    pub fn pop(&mut self, now: SimTime) -> Option<QueuedVee> {
        let v = self.entries.pop_front()?;
        self.trace.push(QueueRecord {
            station: self.station.0,
            vee_seq: v.vee_seq,
            sp_id: v.ext.sp_id.0,
            j: v.j,
            enqueue_ms: v.enqueued_at.as_ms(),
            tx_ms: now.as_ms(),
            delay_ms: now.saturating_sub(v.enqueued_at).as_ms(),
            tx_aligned: v.tx_aligned,
        });
        Some(v)
    }

    /// Drops entries not matching `keep`; returns how many were removed.
    pub fn retain(&mut self, mut keep: impl FnMut(&QueuedVee) -> bool) -> usize {
        let before = self.entries.len();
        self.entries.retain(|v| keep(v));
        before - self.entries.len()
    }

    pub fn remove_sp(&mut self, sp: SpId) -> usize {
        self.retain(|v| v.ext.sp_id != sp)
    }

    pub fn trace(&self) -> &[QueueRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<QueueRecord> {
        std::mem::take(&mut self.trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ext(id: u32) -> VeeExtension {
        VeeExtension::new(id, SpId::VIEW)
    }

    #[test]
    fn fifo_with_positions() {
        let mut q = ExtensionQueue::new(StationId(1));
        q.enqueue(ext(1), SimTime::from_ms(0));
        q.enqueue(ext(2), SimTime::from_ms(5));
        let a = q.pop(SimTime::from_ms(10)).unwrap();
        let b = q.pop(SimTime::from_ms(20)).unwrap();
        assert_eq!((a.ext.event_id, a.j), (1, 0));
        assert_eq!((b.ext.event_id, b.j), (2, 1));
        assert_eq!(q.trace()[1].delay_ms, 15.0);
        assert!(q.pop(SimTime::from_ms(30)).is_none());
    }

    #[test]
    fn hard_cap_drops_oldest() {
        let mut q = ExtensionQueue::new(StationId(1)).with_limits(64, Some(2));
        for i in 0..3 {
            q.enqueue(ext(i), SimTime::ZERO);
        }
        assert_eq!(q.dropped(), 1);
        assert_eq!(q.head().unwrap().ext.event_id, 1);
    }
}
