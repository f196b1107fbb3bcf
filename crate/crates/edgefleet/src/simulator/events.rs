//! Deterministic discrete-event queue for scenario runs.
//!
//! Events fire in timestamp order; ties break by event-kind priority
//! (sensor before telemetry before daily trigger) and then by scheduling
//! order, so identical configs replay identically.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::time::{SimClock, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Sensor = 0,
    Telemetry = 1,
    DailyTrigger = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledEvent {
    pub at: Timestamp,
    pub kind: EventKind,
    /// Room or device index, depending on the kind.
    pub target: usize,
    /// Series index for sensor events, day number for daily triggers.
    pub index: usize,
}

#[derive(Debug, PartialEq, Eq)]
struct QueuedEvent {
    event: ScheduledEvent,
    seq: u64,
}

impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reverse ordering for the max-heap: earliest first.
        (other.event.at, other.event.kind, other.seq).cmp(&(
            self.event.at,
            self.event.kind,
            self.seq,
        ))
    }
}

impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<QueuedEvent>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, at: Timestamp, kind: EventKind, target: usize, index: usize) {
        self.heap.push(QueuedEvent {
            event: ScheduledEvent {
                at,
                kind,
                target,
                index,
            },
            seq: self.next_seq,
        });
        self.next_seq += 1;
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn next_at(&self) -> Option<Timestamp> {
        self.heap.peek().map(|q| q.event.at)
    }

    /// Pops the next event if it fires at or before `to`.
    pub fn pop_until(&mut self, to: Timestamp) -> Option<ScheduledEvent> {
        if self.heap.peek().map_or(false, |q| q.event.at <= to) {
            Some(self.heap.pop().expect("peeked").event)
        } else {
            None
        }
    }
}

/// Advances the simulated clock to `to`, returning every event scheduled in
/// (current, to] in firing order. The clock ends at `to`.
pub fn advance_clock(
    clock: &SimClock,
    queue: &mut EventQueue,
    to: Timestamp,
) -> Vec<ScheduledEvent> {
    let mut fired = Vec::new();
    while let Some(event) = queue.pop_until(to) {
        clock.set(event.at);
        fired.push(event);
    }
    clock.set(to);
    fired
}
