//! Balancer and server queueing: per-class limited queues sharing one buffer,
//! priority ejection into a low-priority storage area, strict-priority
//! service, and per-class loss and delay accounting.
//!
//! All work is counted in integer work units, so the per-class ledger
//! `received = served + dropped + ejected + expired + queued` holds exactly.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = u32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceVector {
    pub cpu: f64,
    pub net: f64,
    pub ram: f64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector {
        cpu: 0.0,
        net: 0.0,
        ram: 0.0,
    };

    pub fn new(cpu: f64, net: f64, ram: f64) -> Self {
        ResourceVector { cpu, net, ram }
    }

    pub fn scale(self, k: f64) -> Self {
        ResourceVector {
            cpu: self.cpu * k,
            net: self.net * k,
            ram: self.ram * k,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, o: Self) -> Self {
        ResourceVector {
            cpu: self.cpu + o.cpu,
            net: self.net + o.net,
            ram: self.ram + o.ram,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, o: Self) -> Self {
        ResourceVector {
            cpu: self.cpu - o.cpu,
            net: self.net - o.net,
            ram: self.ram - o.ram,
        }
    }

    /// Componentwise `self <= cap` with a small relative slack.
    pub fn fits_within(self, cap: Self) -> bool {
        let ok = |a: f64, b: f64| a <= b + 1e-9 * b.abs().max(1.0);
        ok(self.cpu, cap.cpu) && ok(self.net, cap.net) && ok(self.ram, cap.ram)
    }

    pub fn components(self) -> [f64; 3] {
        [self.cpu, self.net, self.ram]
    }

    pub fn is_nonnegative(self) -> bool {
        self.components().iter().all(|c| *c >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceClass {
    pub id: ClassId,
    /// Lower value is served first.
    pub priority: u32,
    /// Maximum permitted mean delay, slots.
    pub tau: f64,
    /// Maximum permitted loss fraction.
    pub loss_bound: f64,
    /// Resource demand per unit of intensity.
    pub demand: ResourceVector,
    /// Packet lifetime in slots; defaults to `tau`.
    #[serde(default)]
    pub lifetime: Option<u64>,
}

impl ServiceClass {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_bound > 0.0 && self.loss_bound < 1.0) {
            return Err(Error::invalid(
                "loss_bound",
                format!("must lie in (0, 1), got {}", self.loss_bound),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid(
                "tau",
                format!("must be > 0, got {}", self.tau),
            ));
        }
        if !self.demand.is_nonnegative() {
            return Err(Error::invalid("demand", "resource components must be >= 0"));
        }
        Ok(())
    }

    pub fn lifetime_slots(&self) -> u64 {
        self.lifetime.unwrap_or(self.tau.ceil() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    pub class: ClassId,
    pub flow_id: u32,
    pub size: u64,
    pub arrival_slot: u64,
    pub deadline_slot: u64,
    /// Work still to be served.
    pub remaining: u64,
    pub service_start: Option<u64>,
    /// Slot the packet entered the network; `arrival_slot` is per node.
    pub created_slot: u64,
    /// Route the packet follows and its position on it.
    pub route: u32,
    pub hop: u32,
}

impl Packet {
    pub fn new(
        id: u64,
        class: ClassId,
        flow_id: u32,
        size: u64,
        arrival_slot: u64,
        lifetime: u64,
    ) -> Self {
        debug_assert!(size > 0);
        Packet {
            id,
            class,
            flow_id,
            size,
            arrival_slot,
            deadline_slot: arrival_slot + lifetime,
            remaining: size,
            service_start: None,
            created_slot: arrival_slot,
            route: 0,
            hop: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnqueueOutcome {
    Queued,
    EjectedOther,
    Dropped,
}

/// Work-unit counters for one class. `displaced` counts victims moved into
/// storage; they are still queued, so it is not a loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounters {
    pub received: u64,
    pub served: u64,
    pub dropped: u64,
    pub ejected: u64,
    pub expired: u64,
    pub displaced: u64,
    pub received_packets: u64,
    pub completed_packets: u64,
    pub wait_sum: u64,
}

impl ClassCounters {
    pub fn lost(&self) -> u64 {
        self.dropped + self.ejected + self.expired
    }

    fn minus(&self, o: &ClassCounters) -> ClassCounters {
        ClassCounters {
            received: self.received - o.received,
            served: self.served - o.served,
            dropped: self.dropped - o.dropped,
            ejected: self.ejected - o.ejected,
            expired: self.expired - o.expired,
            displaced: self.displaced - o.displaced,
            received_packets: self.received_packets - o.received_packets,
            completed_packets: self.completed_packets - o.completed_packets,
            wait_sum: self.wait_sum - o.wait_sum,
        }
    }

    /// `(dropped + ejected + expired) / received`; `None` when nothing arrived.
    pub fn loss_coefficient(&self) -> Option<f64> {
        (self.received > 0).then(|| self.lost() as f64 / self.received as f64)
    }

    /// Mean of `service_start - arrival` over completed packets.
    pub fn mean_wait(&self) -> Option<f64> {
        (self.completed_packets > 0).then(|| self.wait_sum as f64 / self.completed_packets as f64)
    }
}

#[derive(Debug, Clone)]
pub struct ClassQueue {
    pub class: ServiceClass,
    /// Per-class cap in work units (the shared buffer also applies).
    pub capacity: u64,
    queued: VecDeque<Packet>,
    queued_work: u64,
    pub counters: ClassCounters,
}

impl ClassQueue {
    pub fn queued_work(&self) -> u64 {
        self.queued_work
    }

    pub fn len(&self) -> usize {
        self.queued.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queued.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServedPacket {
    pub packet: Packet,
    pub completion_slot: u64,
}

/// Loss fraction with the no-traffic flag and the bound check against `l_qs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub class: ClassId,
    pub loss: f64,
    pub no_traffic: bool,
    pub violates_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaitReport {
    pub class: ClassId,
    pub mean_wait: Option<f64>,
    pub violates_bound: bool,
}

/// A node with per-class queues sharing `buffer_capacity` work units, a
/// storage area for displaced low-priority packets, and a fixed amount of
/// service work per slot.
#[derive(Debug, Clone)]
pub struct QueueNode {
    pub id: String,
    queues: Vec<ClassQueue>,
    storage: VecDeque<Packet>,
    storage_work: u64,
    storage_capacity: u64,
    buffer_capacity: u64,
    service_capacity: f64,
    carry: f64,
    p_eject: f64,
    rng: ChaCha8Rng,
    window_start: Vec<ClassCounters>,
}

impl QueueNode {
    pub fn new(
        id: impl Into<String>,
        mut classes: Vec<ServiceClass>,
        buffer_capacity: u64,
        storage_capacity: u64,
        service_capacity: f64,
        p_eject: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid(
                "classes",
                "a node needs at least one service class",
            ));
        }
        for c in &classes {
            c.validate()?;
        }
        if !(0.0..=1.0).contains(&p_eject) {
            return Err(Error::invalid(
                "p_eject",
                format!("must lie in [0, 1], got {p_eject}"),
            ));
        }
        if !(service_capacity >= 0.0 && service_capacity.is_finite()) {
            return Err(Error::invalid(
                "service_capacity",
                format!("must be >= 0, got {service_capacity}"),
            ));
        }
        classes.sort_by_key(|c| (c.priority, c.id));
        let queues: Vec<ClassQueue> = classes
            .into_iter()
            .map(|class| ClassQueue {
                class,
                capacity: u64::MAX,
                queued: VecDeque::new(),
                queued_work: 0,
                counters: ClassCounters::default(),
            })
            .collect();
        let n = queues.len();
        Ok(QueueNode {
            id: id.into(),
            queues,
            storage: VecDeque::new(),
            storage_work: 0,
            storage_capacity,
            buffer_capacity,
            service_capacity,
            carry: 0.0,
            p_eject,
            rng,
            window_start: vec![ClassCounters::default(); n],
        })
    }

    pub fn queues(&self) -> &[ClassQueue] {
        &self.queues
    }

    fn index_of(&self, class: ClassId) -> Option<usize> {
        self.queues.iter().position(|q| q.class.id == class)
    }

    pub fn class_counters(&self, class: ClassId) -> Option<ClassCounters> {
        self.index_of(class).map(|i| self.queues[i].counters)
    }

    pub fn set_class_cap(&mut self, class: ClassId, cap: u64) {
        if let Some(i) = self.index_of(class) {
            self.queues[i].capacity = cap;
        }
    }

    pub fn buffer_capacity(&self) -> u64 {
        self.buffer_capacity
    }

    /// A resize below current occupancy only blocks admissions until the
    /// backlog drains.
    pub fn set_buffer_capacity(&mut self, cap: u64) {
        self.buffer_capacity = cap;
    }

    pub fn service_capacity(&self) -> f64 {
        self.service_capacity
    }

    pub fn set_service_capacity(&mut self, cap: f64) {
        self.service_capacity = cap.max(0.0);
    }

    pub fn storage_capacity(&self) -> u64 {
        self.storage_capacity
    }

    pub fn set_storage_capacity(&mut self, cap: u64) {
        self.storage_capacity = cap;
    }

    /// Work held in the class queues (storage excluded).
    pub fn buffered_work(&self) -> u64 {
        self.queues.iter().map(|q| q.queued_work).sum()
    }

    pub fn storage_work(&self) -> u64 {
        self.storage_work
    }

    /// Work of `class` still in the node, storage included.
    pub fn queued_work_of(&self, class: ClassId) -> u64 {
        let in_queue = self
            .index_of(class)
            .map(|i| self.queues[i].queued_work)
            .unwrap_or(0);
        let in_storage: u64 = self
            .storage
            .iter()
            .filter(|p| p.class == class)
            .map(|p| p.remaining)
            .sum();
        in_queue + in_storage
    }

    pub fn backlog(&self) -> u64 {
        self.buffered_work() + self.storage_work
    }

    /// Admits `packet`, ejecting strictly lower-priority work when the shared
    /// buffer is full.
    ///
    /// Victims are taken from the lowest class first, most recent arrival
    /// first. A victim moves to storage when it fits there and leaves the
    /// system otherwise, charged to its own class.
    pub fn enqueue(&mut self, packet: Packet) -> EnqueueOutcome {
        let Some(ci) = self.index_of(packet.class) else {
            panic!("packet for unknown class {}", packet.class);
        };
        let size = packet.remaining;
        {
            let c = &mut self.queues[ci].counters;
            c.received += size;
            c.received_packets += 1;
        }

        if self.queues[ci].queued_work + size > self.queues[ci].capacity {
            self.queues[ci].counters.dropped += size;
            return EnqueueOutcome::Dropped;
        }

        let total = self.buffered_work();
        if total + size <= self.buffer_capacity {
            self.push(ci, packet);
            return EnqueueOutcome::Queued;
        }

        let needed = total + size - self.buffer_capacity;
        let priority = self.queues[ci].class.priority;
        let available: u64 = self
            .queues
            .iter()
            .filter(|q| q.class.priority > priority)
            .map(|q| q.queued_work)
            .sum();
        let eject =
            available >= needed && (self.p_eject >= 1.0 || self.rng.random::<f64>() < self.p_eject);
        if !eject {
            self.queues[ci].counters.dropped += size;
            return EnqueueOutcome::Dropped;
        }

        let mut freed = 0;
        for vi in (0..self.queues.len()).rev() {
            if self.queues[vi].class.priority <= priority {
                break;
            }
            while freed < needed {
                let Some(victim) = self.queues[vi].queued.pop_back() else {
                    break;
                };
                let work = victim.remaining;
                self.queues[vi].queued_work -= work;
                freed += work;
                if self.storage_work + work <= self.storage_capacity {
                    self.queues[vi].counters.displaced += work;
                    self.storage_work += work;
                    self.storage.push_back(victim);
                } else {
                    self.queues[vi].counters.ejected += work;
                }
            }
            if freed >= needed {
                break;
            }
        }
        self.push(ci, packet);
        EnqueueOutcome::EjectedOther
    }

    fn push(&mut self, ci: usize, packet: Packet) {
        let q = &mut self.queues[ci];
        q.queued_work += packet.remaining;
        q.queued.push_back(packet);
    }

    /// Purges expired packets, then serves up to the slot's capacity in strict
    /// priority order (FIFO within a class, storage last).
    pub fn service_step(&mut self, slot: u64) -> Vec<ServedPacket> {
        self.purge_expired(slot);

        let budget = self.service_capacity + self.carry;
        let units = budget.floor();
        self.carry = budget - units;
        let mut avail = units as u64;
        let mut served = Vec::new();

        for q in self.queues.iter_mut() {
            while avail > 0 {
                let Some(head) = q.queued.front_mut() else {
                    break;
                };
                let take = head.remaining.min(avail);
                if head.service_start.is_none() {
                    head.service_start = Some(slot);
                }
                head.remaining -= take;
                avail -= take;
                q.queued_work -= take;
                q.counters.served += take;
                if head.remaining == 0 {
                    let p = q.queued.pop_front().expect("head");
                    q.counters.completed_packets += 1;
                    q.counters.wait_sum += p.service_start.unwrap_or(slot) - p.arrival_slot;
                    served.push(ServedPacket {
                        packet: p,
                        completion_slot: slot,
                    });
                }
            }
        }
        while avail > 0 {
            let Some(head) = self.storage.front_mut() else {
                break;
            };
            let take = head.remaining.min(avail);
            if head.service_start.is_none() {
                head.service_start = Some(slot);
            }
            head.remaining -= take;
            avail -= take;
            self.storage_work -= take;
            let ci = self
                .queues
                .iter()
                .position(|q| q.class.id == head.class)
                .expect("class");
            self.queues[ci].counters.served += take;
            if head.remaining == 0 {
                let p = self.storage.pop_front().expect("head");
                let c = &mut self.queues[ci].counters;
                c.completed_packets += 1;
                c.wait_sum += p.service_start.unwrap_or(slot) - p.arrival_slot;
                served.push(ServedPacket {
                    packet: p,
                    completion_slot: slot,
                });
            }
        }
        served
    }

    fn purge_expired(&mut self, slot: u64) {
        for q in self.queues.iter_mut() {
            let before = q.queued.len();
            if q.queued.iter().all(|p| p.deadline_slot >= slot) {
                continue;
            }
            let mut kept = VecDeque::with_capacity(before);
            for p in q.queued.drain(..) {
                if p.deadline_slot < slot {
                    q.queued_work -= p.remaining;
                    q.counters.expired += p.remaining;
                } else {
                    kept.push_back(p);
                }
            }
            q.queued = kept;
        }
        if self.storage.iter().any(|p| p.deadline_slot < slot) {
            let mut kept = VecDeque::with_capacity(self.storage.len());
            for p in self.storage.drain(..) {
                if p.deadline_slot < slot {
                    self.storage_work -= p.remaining;
                    let ci = self
                        .queues
                        .iter()
                        .position(|q| q.class.id == p.class)
                        .expect("class");
                    self.queues[ci].counters.expired += p.remaining;
                } else {
                    kept.push_back(p);
                }
            }
            self.storage = kept;
        }
    }

    /// `received = served + dropped + ejected + expired + queued` for every class.
    pub fn total_counters(&self) -> ClassCounters {
        self.queues.iter().fold(ClassCounters::default(), |acc, q| {
            let c = &q.counters;
            ClassCounters {
                received: acc.received + c.received,
                served: acc.served + c.served,
                dropped: acc.dropped + c.dropped,
                ejected: acc.ejected + c.ejected,
                expired: acc.expired + c.expired,
                displaced: acc.displaced + c.displaced,
                received_packets: acc.received_packets + c.received_packets,
                completed_packets: acc.completed_packets + c.completed_packets,
                wait_sum: acc.wait_sum + c.wait_sum,
            }
        })
    }

    pub fn conservation_holds(&self) -> bool {
        self.queues.iter().all(|q| {
            let c = &q.counters;
            c.received
                == c.served + c.dropped + c.ejected + c.expired + self.queued_work_of(q.class.id)
        })
    }

    /// Counters accumulated since the last [`QueueNode::close_window`].
    pub fn window_counters(&self) -> Vec<(ClassId, ClassCounters)> {
        self.queues
            .iter()
            .zip(&self.window_start)
            .map(|(q, start)| (q.class.id, q.counters.minus(start)))
            .collect()
    }

    /// Closes the current window and returns its per-class counters.
    pub fn close_window(&mut self) -> Vec<(ClassId, ClassCounters)> {
        let out = self.window_counters();
        self.window_start = self.queues.iter().map(|q| q.counters).collect();
        out
    }

    /// Window loss of `class`, flagged against its `l_qs` bound.
    pub fn loss_coefficient(&self, class: ClassId, window: &ClassCounters) -> LossReport {
        let bound = self
            .index_of(class)
            .map(|i| self.queues[i].class.loss_bound)
            .unwrap_or(1.0);
        match window.loss_coefficient() {
            Some(loss) => LossReport {
                class,
                loss,
                no_traffic: false,
                violates_bound: loss > bound,
            },
            None => LossReport {
                class,
                loss: 0.0,
                no_traffic: true,
                violates_bound: false,
            },
        }
    }

    pub fn mean_wait(&self, class: ClassId, window: &ClassCounters) -> WaitReport {
        let tau = self
            .index_of(class)
            .map(|i| self.queues[i].class.tau)
            .unwrap_or(f64::INFINITY);
        let mean_wait = window.mean_wait();
        WaitReport {
            class,
            mean_wait,
            violates_bound: mean_wait.is_some_and(|w| w > tau),
        }
    }
}
