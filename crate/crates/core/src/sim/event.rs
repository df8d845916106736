//! Protocol events: the public trace entries and the internal scheduling
//! queue with its deterministic tie-breaking.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Protocol event kinds, in trace form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    EdgeArrival,
    Downlink,
    Uplink,
    DistillComplete,
    EdgeDeparture,
}

/// One entry of the public event trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: u64,
    pub kind: EventKind,
    pub edge_id: Option<usize>,
}

/// Internal queue payloads. `DispatchCheck` is the core noticing that an
/// expected uplink has timed out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Queued {
    Arrival(usize),
    Departure(usize),
    Uplink(usize),
    DistillDone,
    DispatchCheck,
}

impl Queued {
    /// Same-tick processing priority: arrivals and departures first, then
    /// uplinks, then distill completion, then timeout checks.
    fn rank(self) -> u8 {
        match self {
            Queued::Arrival(_) => 0,
            Queued::Departure(_) => 1,
            Queued::Uplink(_) => 2,
            Queued::DistillDone => 3,
            Queued::DispatchCheck => 4,
        }
    }

    fn edge_id(self) -> usize {
        match self {
            Queued::Arrival(e) | Queued::Departure(e) | Queued::Uplink(e) => e,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Scheduled {
    pub time: u64,
    pub event: Queued,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .cmp(&other.time)
            .then(self.event.rank().cmp(&other.event.rank()))
            .then(self.event.edge_id().cmp(&other.event.edge_id()))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue over `(time, kind rank, edge_id)`.
#[derive(Debug, Default)]
pub(crate) struct EventQueue {
    heap: BinaryHeap<std::cmp::Reverse<Scheduled>>,
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
        }
    }

    pub fn schedule(&mut self, time: u64, event: Queued) {
        self.heap.push(std::cmp::Reverse(Scheduled { time, event }));
    }

    pub fn pop(&mut self) -> Option<Scheduled> {
        self.heap.pop().map(|r| r.0)
    }
}
