//! Discrete-slot simulation kernel: clock, totally ordered event queue and
//! named random streams.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub current_slot: u64,
    pub slot_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    ServiceComplete,
    WindowBoundary,
    Announcement,
    Rebalance,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::Arrival => "arrival",
            EventKind::ServiceComplete => "service_complete",
            EventKind::WindowBoundary => "window_boundary",
            EventKind::Announcement => "announcement",
            EventKind::Rebalance => "rebalance",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord<P> {
    pub slot: u64,
    pub sequence: u64,
    pub kind: EventKind,
    pub payload: P,
}

struct Queued<P>(EventRecord<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.slot, self.0.sequence) == (other.0.slot, other.0.sequence)
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.slot, self.0.sequence).cmp(&(other.0.slot, other.0.sequence))
    }
}

/// Handle returned by [`Scheduler::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounters {
    pub scheduled: u64,
    pub executed: u64,
    pub cancelled: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRow {
    pub slot: u64,
    pub sequence: u64,
    pub kind: EventKind,
    pub entity: String,
    pub detail: String,
}

/// Events execute in `(slot, sequence)` order. Sequence numbers are assigned
/// monotonically at scheduling time, so same-slot events run FIFO.
pub struct Scheduler<P> {
    clock: SimClock,
    queue: BinaryHeap<Reverse<Queued<P>>>,
    next_sequence: u64,
    counters: EventCounters,
    cancelled: BTreeSet<u64>,
    log: Option<Vec<LogRow>>,
}

impl<P> Scheduler<P> {
    pub fn new(slot_duration: f64) -> Self {
        Scheduler {
            clock: SimClock {
                current_slot: 0,
                slot_duration,
            },
            queue: BinaryHeap::new(),
            next_sequence: 0,
            counters: EventCounters::default(),
            cancelled: BTreeSet::new(),
            log: None,
        }
    }

    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn now(&self) -> u64 {
        self.clock.current_slot
    }

    pub fn counters(&self) -> EventCounters {
        self.counters
    }

    pub fn pending(&self) -> u64 {
        self.queue.len() as u64 - self.cancelled.len() as u64
    }

    pub fn schedule(&mut self, slot: u64, kind: EventKind, payload: P) -> Result<EventId> {
        if slot < self.clock.current_slot {
            return Err(Error::ScheduleInPast {
                slot,
                now: self.clock.current_slot,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.counters.scheduled += 1;
        self.queue.push(Reverse(Queued(EventRecord {
            slot,
            sequence,
            kind,
            payload,
        })));
        Ok(EventId(sequence))
    }

    /// Returns false when the event already ran or was cancelled.
    pub fn cancel(&mut self, id: EventId) -> bool {
        let pending = self
            .queue
            .iter()
            .any(|Reverse(Queued(e))| e.sequence == id.0);
        if pending && self.cancelled.insert(id.0) {
            self.counters.cancelled += 1;
            true
        } else {
            false
        }
    }

    /// Appends a row to the event log when logging is enabled.
    pub fn log(&mut self, kind: EventKind, entity: impl Into<String>, detail: impl Into<String>) {
        let slot = self.clock.current_slot;
        let sequence = self.next_sequence;
        if let Some(log) = self.log.as_mut() {
            log.push(LogRow {
                slot,
                sequence,
                kind,
                entity: entity.into(),
                detail: detail.into(),
            });
        }
    }

    pub fn log_rows(&self) -> &[LogRow] {
        self.log.as_deref().unwrap_or(&[])
    }

    /// Executes every event with `slot < bound` and leaves the clock at `bound`.
    pub fn run_until<E, F>(
        &mut self,
        bound: u64,
        mut handler: F,
    ) -> std::result::Result<SimClock, E>
    where
        E: From<Error>,
        F: FnMut(&mut Self, EventRecord<P>) -> std::result::Result<(), E>,
    {
        if bound < self.clock.current_slot {
            return Err(Error::ScheduleInPast {
                slot: bound,
                now: self.clock.current_slot,
            }
            .into());
        }
        while let Some(Reverse(Queued(head))) = self.queue.peek() {
            if head.slot >= bound {
                break;
            }
            let Reverse(Queued(event)) = self.queue.pop().expect("peeked");
            if self.cancelled.remove(&event.sequence) {
                continue;
            }
            self.clock.current_slot = event.slot;
            self.counters.executed += 1;
            handler(self, event)?;
        }
        self.clock.current_slot = bound;
        Ok(self.clock)
    }
}

/// Writes a structured event log as `slot,sequence,kind,entity,detail`.
pub fn write_event_log<W: Write>(rows: &[LogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "sequence", "kind", "entity", "detail"])?;
    for r in rows {
        w.write_record([
            r.slot.to_string(),
            r.sequence.to_string(),
            r.kind.to_string(),
            r.entity.clone(),
            r.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-entity random streams derived from one master seed. A stream depends
/// only on `(master, name)`, so adding entities never shifts another
/// entity's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    master: u64,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        RngStreams { master }
    }

    pub fn seed_for(&self, name: &str) -> u64 {
        splitmix(self.master ^ splitmix(fnv1a(name.as_bytes())))
    }

    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed_for(name))
    }
}
