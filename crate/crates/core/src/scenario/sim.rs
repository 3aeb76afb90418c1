//! Slot-level simulation of one scenario run: flows generate work at the
//! balancer, packets cross link queues hop by hop and finish at a server.
//! Window boundaries drive capacity control, rebalancing and routing
//! announcements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::balancer::{
    resource_demand, system_imbalance, Balancer, FlowRequest, NodeLoad, ServerSpec,
};
use crate::capacity::{control_step, CalibrationTable, ControlAction, ControlDecision, Provision};
use crate::des::{EventKind, LogRow, RngStreams, Scheduler};
use crate::error::{Error, Result};
use crate::estimator::{signature_of, FractalSignature};
use crate::generator::{compose_traffic, GeneratorSpec};
use crate::ledger::{ResourceKey, ResourceLedger};
use crate::queue::{ClassCounters, Packet, QueueNode, ResourceVector, ServiceClass};
use crate::routing::{route_flows_sticky, Demand, Path, Topology};

use super::config::{Method, ScenarioConfig};
use super::metrics::compute_jitter_sum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWindow {
    pub class: u32,
    pub generated: u64,
    pub lost: u64,
    pub delivered_packets: u64,
    pub delay_sum: u64,
}

impl ClassWindow {
    pub fn loss(&self) -> Option<f64> {
        (self.generated > 0).then(|| self.lost as f64 / self.generated as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub window: u64,
    pub utilization: f64,
    pub generated: u64,
    pub lost: u64,
    /// Mean over flows of the consecutive-delay variation, in slots.
    pub jitter: Option<f64>,
    pub imbalance: f64,
    pub classes: Vec<ClassWindow>,
    pub server_loads: Vec<NodeLoad>,
}

impl WindowMetrics {
    pub fn loss(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.lost as f64 / self.generated as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingLogRow {
    pub slot: u64,
    pub flow: String,
    pub path: String,
    pub netx: f64,
    pub path_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancerLogRow {
    pub window: u64,
    pub flow: String,
    pub class: u32,
    pub server: String,
    pub demand_cpu: f64,
    pub demand_net: f64,
    pub demand_ram: f64,
    pub system_imbalance_before: f64,
    pub system_imbalance_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLogRow {
    pub window: u64,
    pub queue: String,
    pub lambda: Option<f64>,
    pub hurst: Option<f64>,
    pub sigma_var: Option<f64>,
    pub buffer: f64,
    pub capacity: f64,
    pub buffer_new: f64,
    pub capacity_new: f64,
    pub action: ControlAction,
    pub applied_buffer: f64,
    pub applied_capacity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub slots_checked: u64,
    pub conservation_violations: u64,
    pub ledger_balanced: bool,
    pub ledger_double_release: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node: String,
    pub totals: ClassCounters,
    /// Work still in the node at run end, storage included.
    pub queued: u64,
    pub final_buffer: u64,
    pub final_capacity: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub nodes: Vec<NodeSummary>,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub windows: Vec<WindowMetrics>,
    pub events: Vec<LogRow>,
    pub routing_log: Vec<RoutingLogRow>,
    pub balancer_log: Vec<BalancerLogRow>,
    pub control_log: Vec<ControlLogRow>,
    pub invariants: InvariantReport,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Route {
    hops: Vec<usize>,
    server: usize,
}

struct FlowState {
    id: String,
    class: u32,
    priority: u32,
    demand_unit: ResourceVector,
    trace: Vec<f64>,
    carry: f64,
    nominal: f64,
    lambda: f64,
    signature: Option<FractalSignature>,
    server: usize,
    route: u32,
    session: Option<(u64, u32)>,
    reservation: ResourceVector,
    // per-window delay series for jitter
    last_delay: Option<u64>,
    jitter_sum: u64,
    jitter_n: u64,
}

struct QueueMeta {
    name: String,
    link: usize,
    max_capacity: f64,
    max_buffer: f64,
    default_storage: bool,
    arrivals: Vec<f64>,
    capacity_sum: f64,
}

struct ServerMeta {
    spec: ServerSpec,
    node: usize,
    backlog_sum: u64,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    table: &'a CalibrationTable,
    classes: Vec<ServiceClass>,
    topo: Topology,
    queues: Vec<QueueNode>,
    qmeta: Vec<QueueMeta>,
    servers: Vec<QueueNode>,
    smeta: Vec<ServerMeta>,
    flows: Vec<FlowState>,
    routes: Vec<Route>,
    route_ids: BTreeMap<Route, u32>,
    in_transit: Vec<Packet>,
    next_packet: u64,
    generated_total: u64,
    delivered_total: u64,
    forwarded_total: u64,
    class_gen: BTreeMap<u32, u64>,
    class_delivered: BTreeMap<u32, (u64, u64)>,
    windows: Vec<WindowMetrics>,
    balancer: Balancer,
    ledger: ResourceLedger,
    routing_log: Vec<RoutingLogRow>,
    balancer_log: Vec<BalancerLogRow>,
    control_log: Vec<ControlLogRow>,
    invariants: InvariantReport,
    last_loads: Option<Vec<NodeLoad>>,
    unrouted: bool,
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, table: &'a CalibrationTable, seed: u64) -> Result<Self> {
        let streams = RngStreams::new(seed);
        let mut topo = Topology::new(cfg.nodes.clone());
        for l in &cfg.links {
            topo.add_link(
                &l.name,
                &l.a,
                &l.b,
                l.base_cost,
                l.capacity * cfg.reservable_fraction,
            )?;
        }
        let classes = cfg.classes.clone();

        let mut smeta = Vec::new();
        let mut servers = Vec::new();
        for s in &cfg.servers {
            let node = topo.node(&s.node).expect("validated");
            servers.push(QueueNode::new(
                s.id.clone(),
                classes.clone(),
                s.ram.floor() as u64,
                0,
                s.cpu,
                cfg.p_eject,
                streams.stream(&format!("server/{}", s.id)),
            )?);
            smeta.push(ServerMeta {
                spec: ServerSpec {
                    id: s.id.clone(),
                    capacity: ResourceVector::new(s.cpu, s.net, s.ram),
                },
                node,
                backlog_sum: 0,
            });
        }

        let len = next_pow2(cfg.slots as usize);
        let mut flows = Vec::new();
        for f in &cfg.flows {
            let class = cfg.class(f.class).expect("validated");
            let mut spec = GeneratorSpec::new(
                f.hurst,
                f.intensity,
                len,
                streams.seed_for(&format!("flow/{}", f.id)),
            )
            .with_envelope_cv(f.envelope_cv);
            if f.depth > 0 {
                spec = spec.with_cascade(f.depth, f.weight);
            }
            let mut trace = compose_traffic(&spec)?.into_values();
            trace.truncate(cfg.slots as usize);
            let server = cfg
                .servers
                .iter()
                .position(|s| s.id == f.server)
                .expect("validated");
            flows.push(FlowState {
                id: f.id.clone(),
                class: f.class,
                priority: class.priority,
                demand_unit: class.demand,
                trace,
                carry: 0.0,
                nominal: f.intensity,
                lambda: f.intensity,
                signature: None,
                server,
                route: 0,
                session: None,
                reservation: ResourceVector::ZERO,
                last_delay: None,
                jitter_sum: 0,
                jitter_n: 0,
            });
        }

        let mut sim = Sim {
            cfg,
            table,
            classes,
            topo,
            queues: Vec::new(),
            qmeta: Vec::new(),
            servers,
            smeta,
            flows,
            routes: Vec::new(),
            route_ids: BTreeMap::new(),
            in_transit: Vec::new(),
            next_packet: 0,
            generated_total: 0,
            delivered_total: 0,
            forwarded_total: 0,
            class_gen: BTreeMap::new(),
            class_delivered: BTreeMap::new(),
            windows: Vec::new(),
            balancer: Balancer {
                migration_margin: cfg.migration_margin,
                ..Balancer::new(cfg.servers.len())
            },
            ledger: ResourceLedger::new(),
            routing_log: Vec::new(),
            balancer_log: Vec::new(),
            control_log: Vec::new(),
            invariants: InvariantReport::default(),
            last_loads: None,
            unrouted: false,
        };

        // static routes give each directed queue its nominal load
        let static_routes: Vec<Route> = (0..sim.flows.len())
            .map(|i| sim.static_route(i))
            .collect::<Result<_>>()?;
        let mut nominal = vec![0.0; 2 * cfg.links.len()];
        for (f, r) in sim.flows.iter().zip(&static_routes) {
            for &q in &r.hops {
                nominal[q] += f.nominal;
            }
        }
        for (li, l) in cfg.links.iter().enumerate() {
            for dir in 0..2 {
                let qi = 2 * li + dir;
                let (from, to) = if dir == 0 { (&l.a, &l.b) } else { (&l.b, &l.a) };
                let buffer = if l.classical_buffer {
                    // sized as a Poisson-like link, loaded no lighter than the
                    // reference load and no heavier than the table reaches
                    let rho_top = table.rho.last().copied().unwrap_or(cfg.rho_ref);
                    let lambda = nominal[qi].clamp(cfg.rho_ref * l.capacity, rho_top * l.capacity);
                    let q = table.required_buffer(l.capacity, lambda, 0.5, 0.5);
                    if q.saturated {
                        return Err(Error::config(
                            format!("links.{}", l.name),
                            "nominal load saturates the link; no classical buffer exists",
                        ));
                    }
                    q.buffer.ceil().max(1.0)
                } else {
                    l.buffer
                };
                let storage = l.storage.unwrap_or(buffer / 4.0);
                let name = format!("{}:{}->{}", l.name, from, to);
                sim.queues.push(QueueNode::new(
                    name.clone(),
                    sim.classes.clone(),
                    buffer as u64,
                    storage as u64,
                    l.capacity,
                    cfg.p_eject,
                    streams.stream(&format!("queue/{name}")),
                )?);
                sim.qmeta.push(QueueMeta {
                    name,
                    link: li,
                    max_capacity: l.max_capacity.unwrap_or(l.capacity),
                    max_buffer: l.max_buffer.unwrap_or(f64::INFINITY),
                    default_storage: l.storage.is_none(),
                    arrivals: vec![0.0; cfg.window as usize],
                    capacity_sum: 0.0,
                });
            }
        }
        for (i, r) in static_routes.into_iter().enumerate() {
            sim.flows[i].route = sim.intern(r);
        }
        Ok(sim)
    }

    fn intern(&mut self, r: Route) -> u32 {
        if let Some(&id) = self.route_ids.get(&r) {
            return id;
        }
        let id = self.routes.len() as u32;
        self.routes.push(r.clone());
        self.route_ids.insert(r, id);
        id
    }

    fn hops_of(&self, src: usize, path: &Path) -> Vec<usize> {
        let mut at = src;
        let mut hops = Vec::with_capacity(path.links.len());
        for &l in &path.links {
            let link = &self.topo.links[l];
            if link.a == at {
                hops.push(2 * l);
                at = link.b;
            } else {
                hops.push(2 * l + 1);
                at = link.a;
            }
        }
        hops
    }

    fn flow_src(&self, i: usize) -> usize {
        self.topo.node(&self.cfg.flows[i].src).expect("validated")
    }

    /// Cheapest path by base cost, ignoring capacity.
    fn static_route(&self, i: usize) -> Result<Route> {
        let server = self.flows[i].server;
        let src = self.flow_src(i);
        let dst = self.smeta[server].node;
        if src == dst {
            return Ok(Route {
                hops: Vec::new(),
                server,
            });
        }
        let mut base = self.topo.clone();
        base.links.iter_mut().for_each(|l| {
            l.cost = l.base_cost;
            l.allocated = 0.0;
        });
        let path = base.shortest_path(src, dst, 0.0).ok_or_else(|| {
            Error::config(
                format!("flows.{}", self.flows[i].id),
                "no path from source to server",
            )
        })?;
        Ok(Route {
            hops: self.hops_of(src, &path),
            server,
        })
    }

    fn inject(&mut self, slot: u64) {
        let max_packet = self.cfg.max_packet;
        for fi in 0..self.flows.len() {
            let f = &mut self.flows[fi];
            f.carry += f.trace[slot as usize];
            let mut units = f.carry.floor() as u64;
            f.carry -= units as f64;
            if units == 0 {
                continue;
            }
            *self.class_gen.entry(f.class).or_insert(0) += units;
            self.generated_total += units;
            let lifetime = self
                .classes
                .iter()
                .find(|c| c.id == f.class)
                .expect("class")
                .lifetime_slots();
            let route = f.route;
            let (class, flow_id) = (f.class, fi as u32);
            while units > 0 {
                let size = units.min(max_packet);
                units -= size;
                let mut p = Packet::new(self.next_packet, class, flow_id, size, slot, lifetime);
                self.next_packet += 1;
                p.route = route;
                self.forward(p, slot);
            }
        }
    }

    /// Hands a packet to the queue at its current hop, or to its server.
    fn forward(&mut self, mut p: Packet, slot: u64) {
        p.arrival_slot = slot;
        p.service_start = None;
        p.remaining = p.size;
        let route = &self.routes[p.route as usize];
        if (p.hop as usize) < route.hops.len() {
            let q = route.hops[p.hop as usize];
            self.qmeta[q].arrivals[(slot % self.cfg.window) as usize] += p.size as f64;
            self.queues[q].enqueue(p);
        } else {
            let s = route.server;
            self.servers[s].enqueue(p);
        }
    }

    fn serve(&mut self, slot: u64) {
        for qi in 0..self.queues.len() {
            self.qmeta[qi].capacity_sum += self.queues[qi].service_capacity();
            for done in self.queues[qi].service_step(slot) {
                let mut p = done.packet;
                self.forwarded_total += p.size;
                p.hop += 1;
                self.in_transit.push(p);
            }
        }
        for si in 0..self.servers.len() {
            for done in self.servers[si].service_step(slot) {
                let p = done.packet;
                let delay = done.completion_slot - p.created_slot;
                self.delivered_total += p.size;
                let e = self.class_delivered.entry(p.class).or_insert((0, 0));
                e.0 += 1;
                e.1 += delay;
                let f = &mut self.flows[p.flow_id as usize];
                if let Some(prev) = f.last_delay {
                    f.jitter_sum += prev.abs_diff(delay);
                    f.jitter_n += 1;
                }
                f.last_delay = Some(delay);
            }
            self.smeta[si].backlog_sum += self.servers[si].backlog();
        }
    }

    fn check_invariants(&mut self) {
        self.invariants.slots_checked += 1;
        let nodes_ok = self
            .queues
            .iter()
            .chain(&self.servers)
            .all(QueueNode::conservation_holds);
        // every hand-off between nodes is accounted for: what entered the
        // nodes equals what was generated plus what links forwarded and
        // someone already received
        let received: u64 = self
            .queues
            .iter()
            .chain(&self.servers)
            .map(|n| n.total_counters().received)
            .sum();
        let transit: u64 = self.in_transit.iter().map(|p| p.size).sum();
        let network_ok = received + transit == self.generated_total + self.forwarded_total;
        if !(nodes_ok && network_ok) {
            self.invariants.conservation_violations += 1;
        }
    }

    fn step(&mut self, slot: u64) {
        for p in std::mem::take(&mut self.in_transit) {
            self.forward(p, slot);
        }
        self.inject(slot);
        self.serve(slot);
        self.check_invariants();
    }

    /// Closes window `k` (slots `[k W, (k+1) W)`) and records its metrics.
    fn close_window(&mut self, k: u64) {
        let w = self.cfg.window as f64;
        let mut class_lost: BTreeMap<u32, u64> = BTreeMap::new();
        let mut carried = 0.0;
        let mut active_capacity = 0.0;
        for (q, meta) in self.queues.iter_mut().zip(self.qmeta.iter_mut()) {
            let counters = q.close_window();
            let served: u64 = counters.iter().map(|(_, c)| c.served).sum();
            let received: u64 = counters.iter().map(|(_, c)| c.received).sum();
            for (class, c) in &counters {
                *class_lost.entry(*class).or_insert(0) += c.lost();
            }
            if received > 0 || served > 0 {
                carried += served as f64;
                active_capacity += meta.capacity_sum;
            }
            meta.capacity_sum = 0.0;
        }
        let mut loads = Vec::new();
        for (s, meta) in self.servers.iter_mut().zip(self.smeta.iter_mut()) {
            let counters: Vec<(u32, ClassCounters)> = s.close_window();
            let served: u64 = counters.iter().map(|(_, c)| c.served).sum();
            let received: u64 = counters.iter().map(|(_, c)| c.received).sum();
            for (class, c) in &counters {
                *class_lost.entry(*class).or_insert(0) += c.lost();
            }
            let cap = meta.spec.capacity;
            loads.push(NodeLoad::new(
                meta.spec.id.clone(),
                served as f64 / (cap.cpu * w),
                meta.backlog_sum as f64 / w / cap.ram,
                received as f64 / (cap.net * w),
            ));
            meta.backlog_sum = 0;
        }
        let imbalance = system_imbalance(&loads, k).system_imbalance;

        let jitters: Vec<f64> = self
            .flows
            .iter()
            .filter(|f| f.jitter_n > 0)
            .map(|f| compute_jitter_sum(f.jitter_sum, f.jitter_n))
            .collect();
        let jitter =
            (!jitters.is_empty()).then(|| jitters.iter().sum::<f64>() / jitters.len() as f64);
        for f in self.flows.iter_mut() {
            f.jitter_sum = 0;
            f.jitter_n = 0;
            f.last_delay = None;
        }

        let mut classes = Vec::new();
        let mut generated = 0;
        let mut lost = 0;
        for c in &self.classes {
            let g = self.class_gen.remove(&c.id).unwrap_or(0);
            let l = class_lost.get(&c.id).copied().unwrap_or(0);
            let (n, d) = self.class_delivered.remove(&c.id).unwrap_or((0, 0));
            generated += g;
            lost += l;
            classes.push(ClassWindow {
                class: c.id,
                generated: g,
                lost: l,
                delivered_packets: n,
                delay_sum: d,
            });
        }
        self.windows.push(WindowMetrics {
            window: k,
            utilization: if active_capacity > 0.0 {
                carried / active_capacity
            } else {
                0.0
            },
            generated,
            lost,
            jitter,
            imbalance,
            classes,
            server_loads: loads.clone(),
        });
        self.last_loads = Some(loads);
    }

    /// Per-flow signatures over the window that just ended.
    fn estimate_flows(&mut self, end: u64) {
        let w = self.cfg.window;
        for f in self.flows.iter_mut() {
            let window = &f.trace[(end - w) as usize..end as usize];
            f.lambda = window.iter().sum::<f64>() / w as f64;
            f.signature = signature_of(window).ok();
        }
    }

    /// Last window's flow traces summed along each flow's current route,
    /// raised to the measured arrivals where those were larger (downstream
    /// hops see upstream queues drain in bursts).
    fn projected_arrivals(&self, end: u64) -> Vec<Vec<f64>> {
        let w = self.cfg.window as usize;
        let mut out = vec![vec![0.0; w]; self.queues.len()];
        for f in &self.flows {
            let window = &f.trace[end as usize - w..end as usize];
            for &q in &self.routes[f.route as usize].hops {
                out[q].iter_mut().zip(window).for_each(|(a, x)| *a += x);
            }
        }
        for (o, m) in out.iter_mut().zip(&self.qmeta) {
            o.iter_mut()
                .zip(&m.arrivals)
                .for_each(|(a, x)| *a = a.max(*x));
        }
        out
    }

    fn control(&mut self, k: u64, end: u64, sched: &mut Scheduler<u64>) {
        let projected = self.projected_arrivals(end);
        for (qi, arrivals) in projected.into_iter().enumerate() {
            if arrivals.iter().all(|a| *a == 0.0) {
                continue;
            }
            let q = &mut self.queues[qi];
            let meta = &self.qmeta[qi];
            let current = Provision {
                buffer: q.buffer_capacity() as f64,
                capacity: q.service_capacity(),
            };
            let d = control_step(self.table, k, &arrivals, current);
            let mut applied = current;
            if d.action != ControlAction::None {
                applied = provision(self.table, &d, current, meta);
            }
            q.set_buffer_capacity(applied.buffer as u64);
            q.set_service_capacity(applied.capacity);
            if meta.default_storage {
                q.set_storage_capacity((applied.buffer / 4.0) as u64);
            }
            let li = meta.link;
            let link_cap = self.queues[2 * li]
                .service_capacity()
                .max(self.queues[2 * li + 1].service_capacity());
            self.topo.links[li].capacity = link_cap * self.cfg.reservable_fraction;
            let sig = d.signature.as_ref();
            sched.log(
                EventKind::WindowBoundary,
                self.qmeta[qi].name.clone(),
                format!(
                    "control action={:?} buffer={:?} capacity={:?}",
                    d.action, applied.buffer, applied.capacity
                ),
            );
            self.control_log.push(ControlLogRow {
                window: k,
                queue: self.qmeta[qi].name.clone(),
                lambda: sig.map(|s| s.intensity_lambda),
                hurst: sig.map(|s| s.hurst_h),
                sigma_var: sig.map(|s| s.sigma_var),
                buffer: current.buffer,
                capacity: current.capacity,
                buffer_new: d.recommended.buffer,
                capacity_new: d.recommended.capacity,
                action: d.action,
                applied_buffer: applied.buffer,
                applied_capacity: applied.capacity,
            });
        }
    }

    fn demand_of(&self, f: &FlowState) -> ResourceVector {
        match &f.signature {
            Some(sig) => {
                let class = self
                    .classes
                    .iter()
                    .find(|c| c.id == f.class)
                    .expect("class");
                resource_demand(sig, class, Some(self.table), self.cfg.rho_ref)
            }
            None => f.demand_unit.scale(f.lambda),
        }
    }

    fn rebalance(&mut self, k: u64, sched: &mut Scheduler<u64>) -> bool {
        let requests: Vec<(FlowRequest, bool)> = self
            .flows
            .iter()
            .map(|f| {
                (
                    FlowRequest {
                        flow_id: f.id.clone(),
                        class: f.class,
                        priority: f.priority,
                        demand: self.demand_of(f),
                    },
                    f.signature.is_some() || k == 0,
                )
            })
            .collect();
        let servers: Vec<ServerSpec> = self.smeta.iter().map(|m| m.spec.clone()).collect();
        let background = vec![ResourceVector::ZERO; servers.len()];
        let measured = self.last_loads.clone();
        let step = self
            .balancer
            .step(k, &requests, &servers, &background, measured.as_deref());
        let mut changed = false;
        for a in &step.plan.assignments {
            let fi = self
                .flows
                .iter()
                .position(|f| f.id == a.flow_id)
                .expect("flow");
            if self.flows[fi].server != a.server {
                self.flows[fi].server = a.server;
                changed = true;
            }
            self.flows[fi].reservation = a.reserved;
            self.balancer_log.push(BalancerLogRow {
                window: k,
                flow: a.flow_id.clone(),
                class: a.class,
                server: servers[a.server].id.clone(),
                demand_cpu: a.reserved.cpu,
                demand_net: a.reserved.net,
                demand_ram: a.reserved.ram,
                system_imbalance_before: step.plan.imbalance_before,
                system_imbalance_after: step.plan.imbalance_after,
            });
        }
        sched.log(
            EventKind::Rebalance,
            "balancer",
            format!(
                "assigned={} deferred={} sticky={} imbalance_after={:?}",
                step.plan.assignments.len(),
                step.plan.deferred.len(),
                step.sticky.len(),
                step.plan.imbalance_after
            ),
        );
        changed
    }

    /// Link costs from the dominant flow on each link, falling back to the
    /// link's aggregate arrivals when that flow has no signature.
    fn announce(
        &mut self,
        aggregate: &[Option<FractalSignature>],
        sched: &mut Scheduler<u64>,
    ) -> Result<bool> {
        let mut sigs = vec![None; self.topo.links.len()];
        for (li, sig) in sigs.iter_mut().enumerate() {
            let dominant = self
                .flows
                .iter()
                .filter(|f| {
                    self.routes[f.route as usize]
                        .hops
                        .iter()
                        .any(|&q| q / 2 == li)
                })
                .max_by(|a, b| a.lambda.total_cmp(&b.lambda));
            *sig = dominant
                .and_then(|f| f.signature.as_ref())
                .or(aggregate[li].as_ref())
                .map(|s| (s.hurst_h, s.sigma_var));
        }
        let changed = self.topo.announce(&sigs, self.cfg.c0)?;
        let costs: Vec<String> = self
            .topo
            .links
            .iter()
            .map(|l| format!("{}={:?}", l.name, l.cost))
            .collect();
        sched.log(
            EventKind::Announcement,
            "router",
            format!("changed={changed} {}", costs.join(" ")),
        );
        Ok(changed)
    }

    fn reroute(&mut self, slot: u64) -> Result<()> {
        let mut topo = self.topo.clone();
        topo.clear_allocations();
        let demands: Vec<Demand> = self
            .flows
            .iter()
            .enumerate()
            .map(|(i, f)| Demand {
                flow_id: f.id.clone(),
                class: f.class,
                priority: f.priority,
                src: self.flow_src(i),
                dst: self.smeta[f.server].node,
                bandwidth: f.lambda,
                splittable: false,
            })
            .collect();
        let incumbent: Vec<Option<Path>> = self
            .flows
            .iter()
            .map(|f| {
                let hops = &self.routes[f.route as usize].hops;
                (slot > 0).then(|| Path {
                    links: hops.iter().map(|q| q / 2).collect(),
                })
            })
            .collect();
        let outcome = route_flows_sticky(&mut topo, &demands, &incumbent, self.cfg.reroute_margin)?;
        self.unrouted = false;
        for (i, r) in outcome.demands.iter().enumerate() {
            let route = match r.shares.first() {
                Some(share) if r.unrouted == 0.0 => Route {
                    hops: self.hops_of(demands[i].src, &share.path),
                    server: self.flows[i].server,
                },
                _ => {
                    self.unrouted = true;
                    self.static_route(i)?
                }
            };
            let path = route
                .hops
                .iter()
                .map(|&q| self.qmeta[q].name.clone())
                .collect::<Vec<_>>()
                .join(" ");
            let cost = r.shares.first().map(|s| s.cost).unwrap_or(f64::NAN);
            self.routing_log.push(RoutingLogRow {
                slot,
                flow: self.flows[i].id.clone(),
                path,
                netx: r.routed(),
                path_cost: cost,
            });
            self.flows[i].route = self.intern(route);
        }
        Ok(())
    }

    fn refresh_static_routes(&mut self) -> Result<()> {
        for i in 0..self.flows.len() {
            let r = self.static_route(i)?;
            self.flows[i].route = self.intern(r);
        }
        Ok(())
    }

    /// Opens a resource session for every flow whose route or server changed.
    fn sync_sessions(&mut self, slot: u64) -> Result<()> {
        for i in 0..self.flows.len() {
            let route = self.flows[i].route;
            if let Some((start, r)) = self.flows[i].session {
                if r == route {
                    continue;
                }
                if let Err(e) = self.ledger.release_resources(&self.flows[i].id, start) {
                    if matches!(e, Error::DoubleRelease { .. }) {
                        self.invariants.ledger_double_release = true;
                    }
                    return Err(e);
                }
            }
            let f = &self.flows[i];
            let r = &self.routes[route as usize];
            let server = &self.smeta[r.server].spec.id;
            let res = if f.reservation == ResourceVector::ZERO {
                f.demand_unit.scale(f.lambda)
            } else {
                f.reservation
            };
            let mut holdings: Vec<(ResourceKey, f64)> = r
                .hops
                .iter()
                .map(|&q| (ResourceKey::Link(self.qmeta[q].name.clone()), f.lambda))
                .collect();
            holdings.push((ResourceKey::Cpu(server.clone()), res.cpu));
            holdings.push((ResourceKey::Net(server.clone()), res.net));
            holdings.push((ResourceKey::Ram(server.clone()), res.ram));
            self.ledger.allocate(&f.id, f.class, slot, holdings)?;
            self.flows[i].session = Some((slot, route));
        }
        Ok(())
    }

    fn boundary(&mut self, slot: u64, sched: &mut Scheduler<u64>) -> Result<()> {
        let w = self.cfg.window;
        let k = slot / w;
        if slot > 0 {
            self.close_window(k - 1);
            self.estimate_flows(slot);
        }
        if slot >= self.cfg.slots {
            return Ok(());
        }
        let aggregate: Vec<Option<FractalSignature>> = (0..self.topo.links.len())
            .map(|li| {
                let a = &self.qmeta[2 * li].arrivals;
                let b = &self.qmeta[2 * li + 1].arrivals;
                let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                signature_of(&sum).ok()
            })
            .collect();
        let mut servers_changed = false;
        if self.cfg.enabled(Method::LoadBalancing) {
            servers_changed = self.rebalance(k, sched);
        }
        if self.cfg.enabled(Method::FractalRouting) {
            let costs_changed = slot > 0
                && slot.is_multiple_of(self.cfg.announce_interval())
                && self.announce(&aggregate, sched)?;
            if slot == 0 || costs_changed || servers_changed || self.unrouted {
                self.reroute(slot)?;
            }
        } else if slot == 0 || servers_changed {
            self.refresh_static_routes()?;
        }
        // provisioning follows the routes just chosen, so a queue that is
        // about to receive a flow is sized before the flow arrives
        if self.cfg.enabled(Method::CapacityControl) && slot > 0 {
            self.control(k - 1, slot, sched);
        }
        for m in self.qmeta.iter_mut() {
            m.arrivals.iter_mut().for_each(|a| *a = 0.0);
        }
        self.sync_sessions(slot)
    }
}

/// Runs one seed of a scenario.
pub fn run_once(cfg: &ScenarioConfig, table: &CalibrationTable, seed: u64) -> Result<RunOutput> {
    let mut sim = Sim::new(cfg, table, seed)?;
    let mut sched: Scheduler<u64> = Scheduler::new(cfg.slot_duration_ms).with_log();
    let w = cfg.window;
    sched.schedule(0, EventKind::WindowBoundary, 0)?;
    sched.schedule(0, EventKind::Arrival, 0)?;
    let end = cfg.slots;
    sched.run_until::<Error, _>(end + 1, |s, ev| {
        match ev.kind {
            EventKind::WindowBoundary => sim.boundary(ev.slot, s)?,
            EventKind::Arrival => {
                sim.step(ev.slot);
                let next = ev.slot + 1;
                if next % w == 0 || next == end {
                    s.schedule(next, EventKind::WindowBoundary, next / w)?;
                }
                if next < end {
                    s.schedule(next, EventKind::Arrival, 0)?;
                }
            }
            _ => {}
        }
        Ok(())
    })?;

    for f in &sim.flows {
        if let Some((start, _)) = f.session {
            sim.ledger.release_resources(&f.id, start)?;
        }
    }
    sim.invariants.ledger_balanced = sim.ledger.all_zero() && sim.ledger.imbalance() == 0;
    let nodes = sim
        .queues
        .iter()
        .chain(&sim.servers)
        .map(|n| NodeSummary {
            node: n.id.clone(),
            totals: n.total_counters(),
            queued: n.backlog(),
            final_buffer: n.buffer_capacity(),
            final_capacity: n.service_capacity(),
        })
        .collect();
    Ok(RunOutput {
        nodes,
        seed,
        methods: cfg.methods.clone(),
        windows: sim.windows,
        events: sched.log_rows().to_vec(),
        routing_log: sim.routing_log,
        balancer_log: sim.balancer_log,
        control_log: sim.control_log,
        invariants: sim.invariants,
    })
}

// capacity first, up to its ceiling; the buffer then covers whatever the
// chosen capacity leaves
fn provision(
    table: &CalibrationTable,
    d: &ControlDecision,
    current: Provision,
    meta: &QueueMeta,
) -> Provision {
    let Some(sig) = d.signature.as_ref() else {
        return current;
    };
    let want = if d.recommended.capacity.is_finite() {
        d.recommended.capacity
    } else {
        meta.max_capacity
    };
    let capacity = want.min(meta.max_capacity).max(current.capacity);
    let q = table.required_buffer(capacity, sig.intensity_lambda, sig.hurst_h, sig.sigma_var);
    let buffer = if q.saturated {
        meta.max_buffer
    } else {
        q.buffer.ceil()
    };
    Provision {
        buffer: buffer.min(meta.max_buffer).max(current.buffer),
        capacity,
    }
}
