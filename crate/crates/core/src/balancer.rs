//! Window-by-window load balancing of flows onto servers by their
//! fractal-signature-derived resource demand.

use serde::{Deserialize, Serialize};

use crate::capacity::CalibrationTable;
use crate::estimator::FractalSignature;
use crate::queue::{ResourceVector, ServiceClass};

const MEAN_FLOOR: f64 = 0.05;
const HEADROOM_MAX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub id: String,
    pub capacity: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLoad {
    pub server_id: String,
    pub cpu: f64,
    pub ram: f64,
    pub net: f64,
}

impl NodeLoad {
    pub fn new(server_id: impl Into<String>, cpu: f64, ram: f64, net: f64) -> Self {
        let c = |v: f64| v.clamp(0.0, 1.0);
        NodeLoad {
            server_id: server_id.into(),
            cpu: c(cpu),
            ram: c(ram),
            net: c(net),
        }
    }

    fn components(&self) -> [f64; 3] {
        [self.cpu, self.ram, self.net]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub window_index: u64,
    pub scores: Vec<(String, f64)>,
    pub system_imbalance: f64,
}

/// Dispersion of utilizations: the mean over resources of
/// `std_r / max(mean_r, 0.05)`. Each node scores its largest absolute
/// deviation from a resource mean.
pub fn system_imbalance(loads: &[NodeLoad], window_index: u64) -> ImbalanceReport {
    if loads.is_empty() {
        return ImbalanceReport {
            window_index,
            scores: Vec::new(),
            system_imbalance: 0.0,
        };
    }
    let n = loads.len() as f64;
    let mut means = [0.0; 3];
    for l in loads {
        for (m, v) in means.iter_mut().zip(l.components()) {
            *m += v / n;
        }
    }
    let mut total = 0.0;
    for (r, &mean) in means.iter().enumerate() {
        let var = loads
            .iter()
            .map(|l| (l.components()[r] - mean).powi(2))
            .sum::<f64>()
            / n;
        total += var.sqrt() / mean.max(MEAN_FLOOR);
    }
    let scores = loads
        .iter()
        .map(|l| {
            let s = l
                .components()
                .iter()
                .zip(&means)
                .map(|(v, m)| (v - m).abs())
                .fold(0.0, f64::max);
            (l.server_id.clone(), s)
        })
        .collect();
    ImbalanceReport {
        window_index,
        scores,
        system_imbalance: total / 3.0,
    }
}

/// Burst headroom `g(H, σ_var)`: the table's buffer requirement relative to
/// the `(H = 0.5, σ_var = 0.5)` cell at utilization `rho_ref`, clamped to
/// `[1, 4]`. Without a table there is no headroom.
pub fn headroom_factor(
    table: Option<&CalibrationTable>,
    rho_ref: f64,
    h: f64,
    sigma_var: f64,
) -> f64 {
    let Some(t) = table else { return 1.0 };
    let base = t.buffer_norm(rho_ref, 0.5, 0.5).buffer;
    let here = t.buffer_norm(rho_ref, h, sigma_var).buffer;
    if !(base > 0.0) || base.is_infinite() {
        return 1.0;
    }
    (here / base).clamp(1.0, HEADROOM_MAX)
}

/// `μ_qs · λ · g(H, σ_var)`.
pub fn resource_demand(
    sig: &FractalSignature,
    class: &ServiceClass,
    table: Option<&CalibrationTable>,
    rho_ref: f64,
) -> ResourceVector {
    let g = headroom_factor(table, rho_ref, sig.hurst_h, sig.sigma_var);
    class.demand.scale(sig.intensity_lambda * g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRequest {
    pub flow_id: String,
    pub class: u32,
    pub priority: u32,
    pub demand: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowAssignment {
    pub flow_id: String,
    pub class: u32,
    pub server: usize,
    pub reserved: ResourceVector,
    pub window_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub assignments: Vec<FlowAssignment>,
    pub deferred: Vec<String>,
    /// Projected per-server utilization once every assignment is applied.
    pub forecast: Vec<NodeLoad>,
    pub imbalance_before: f64,
    pub imbalance_after: f64,
}

fn loads_of(servers: &[ServerSpec], reserved: &[ResourceVector]) -> Vec<NodeLoad> {
    servers
        .iter()
        .zip(reserved)
        .map(|(s, r)| {
            let u = |a: f64, c: f64| if c > 0.0 { a / c } else { 0.0 };
            NodeLoad::new(
                s.id.clone(),
                u(r.cpu, s.capacity.cpu),
                u(r.ram, s.capacity.ram),
                u(r.net, s.capacity.net),
            )
        })
        .collect()
}

fn imbalance_of(servers: &[ServerSpec], reserved: &[ResourceVector]) -> f64 {
    system_imbalance(&loads_of(servers, reserved), 0).system_imbalance
}

fn demand_size(d: &ResourceVector) -> f64 {
    d.cpu + d.net + d.ram
}

/// Greedy assignment: flows by priority, then descending demand; each goes to
/// the feasible server with the lowest post-assignment imbalance, lowest
/// index on ties. `background` is what each server already holds. Flows that
/// fit nowhere, even after relocating a few others, are deferred. A local
/// search then refines the result.
///
/// The pass is repeated from a few other flow orders. A restart replaces the
/// result if it defers a strict subset of the flows, or the same flows and is
/// strictly better balanced; it never defers a flow the current result placed.
pub fn assign_flows(
    flows: &[FlowRequest],
    servers: &[ServerSpec],
    background: &[ResourceVector],
    window_index: u64,
) -> AssignmentPlan {
    debug_assert_eq!(servers.len(), background.len());
    let imbalance_before = imbalance_of(servers, background);
    let total = servers
        .iter()
        .fold(ResourceVector::ZERO, |acc, s| acc.add(s.capacity));
    let share = |d: &ResourceVector| {
        let r = |a: f64, c: f64| if c > 0.0 { a / c } else { 0.0 };
        r(d.cpu, total.cpu)
            .max(r(d.net, total.net))
            .max(r(d.ram, total.ram))
    };
    let by = |key: &dyn Fn(&FlowRequest) -> f64, keep_priority: bool| {
        let mut order: Vec<usize> = (0..flows.len()).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = (&flows[i], &flows[j]);
            let p = if keep_priority {
                a.priority.cmp(&b.priority)
            } else {
                std::cmp::Ordering::Equal
            };
            p.then(key(b).total_cmp(&key(a))).then(i.cmp(&j))
        });
        order
    };
    let size = |f: &FlowRequest| demand_size(&f.demand);
    let dominant = |f: &FlowRequest| share(&f.demand);
    let smallest = |f: &FlowRequest| -demand_size(&f.demand);

    let mut best = place(flows, servers, background, &by(&size, true));
    for order in [
        by(&dominant, true),
        by(&size, false),
        by(&dominant, false),
        by(&smallest, true),
    ] {
        let alt = place(flows, servers, background, &order);
        let imb = |p: &Placement| imbalance_of(servers, &p.reserved);
        let subset = alt.deferred.iter().all(|i| best.deferred.contains(i));
        if subset && (alt.deferred.len() < best.deferred.len() || imb(&alt) < imb(&best) - 1e-12) {
            best = alt;
        }
    }
    let assignments = best
        .assignments
        .into_iter()
        .map(|(i, server)| FlowAssignment {
            flow_id: flows[i].flow_id.clone(),
            class: flows[i].class,
            server,
            reserved: flows[i].demand,
            window_index,
        })
        .collect();
    let mut deferred_idx = best.deferred;
    deferred_idx.sort_unstable();
    let deferred = deferred_idx
        .into_iter()
        .map(|i| flows[i].flow_id.clone())
        .collect();
    let forecast = loads_of(servers, &best.reserved);
    let imbalance_after = system_imbalance(&forecast, window_index).system_imbalance;
    AssignmentPlan {
        assignments,
        deferred,
        forecast,
        imbalance_before,
        imbalance_after,
    }
}

struct Placement {
    /// `(flow index, server)` in placement order.
    assignments: Vec<(usize, usize)>,
    deferred: Vec<usize>,
    reserved: Vec<ResourceVector>,
}

fn place(
    flows: &[FlowRequest],
    servers: &[ServerSpec],
    background: &[ResourceVector],
    order: &[usize],
) -> Placement {
    let mut reserved = background.to_vec();
    let mut assignments: Vec<FlowAssignment> = Vec::new();
    let mut index = Vec::new();
    let mut deferred = Vec::new();
    for &i in order {
        let f = &flows[i];
        let mut best: Option<(usize, f64)> = None;
        for (s, spec) in servers.iter().enumerate() {
            let after = reserved[s].add(f.demand);
            if !after.fits_within(spec.capacity) {
                continue;
            }
            let old = reserved[s];
            reserved[s] = after;
            let score = imbalance_of(servers, &reserved);
            reserved[s] = old;
            if best.is_none_or(|(_, b)| score < b - 1e-12) {
                best = Some((s, score));
            }
        }
        let target = match best {
            Some((s, _)) => Some(s),
            None => make_room(&mut assignments, servers, &mut reserved, f.demand),
        };
        match target {
            Some(s) => {
                reserved[s] = reserved[s].add(f.demand);
                index.push(i);
                assignments.push(FlowAssignment {
                    flow_id: f.flow_id.clone(),
                    class: f.class,
                    server: s,
                    reserved: f.demand,
                    window_index: 0,
                });
            }
            None => deferred.push(i),
        }
    }
    improve_assignment(&mut assignments, servers, &mut reserved);
    Placement {
        assignments: index
            .into_iter()
            .zip(assignments.iter().map(|a| a.server))
            .collect(),
        deferred,
        reserved,
    }
}

/// Flows relocated together by one local-search move.
const MOVE_SIZE: usize = 3;

fn all_fit(reserved: &[ResourceVector], servers: &[ServerSpec]) -> bool {
    reserved
        .iter()
        .zip(servers)
        .all(|(r, s)| r.fits_within(s.capacity))
}

/// Local search after the greedy pass. A move relocates up to
/// [`MOVE_SIZE`] flows at once (swaps and rotations included); the first
/// feasible move that lowers the imbalance is taken, until none is left.
/// The local optimum is then kicked: each single relocation, and each
/// exchange of the full contents of two servers, is forced in turn and the
/// search rerun, keeping the result if it beats the optimum.
fn improve_assignment(
    assignments: &mut [FlowAssignment],
    servers: &[ServerSpec],
    reserved: &mut [ResourceVector],
) {
    let mut best = descend(assignments, servers, reserved, MOVE_SIZE);
    let n = servers.len();
    let kicks: Vec<Kick> = (0..assignments.len())
        .flat_map(|i| (0..n).map(move |to| Kick::Move(i, to)))
        .chain((0..n).flat_map(|a| (a + 1..n).map(move |b| Kick::Exchange(a, b))))
        .collect();
    'kick: for _round in 0..64 {
        for &kick in &kicks {
            let saved: Vec<usize> = assignments.iter().map(|a| a.server).collect();
            let saved_reserved = reserved.to_vec();
            if !kick.apply(assignments, reserved) {
                continue;
            }
            let v = descend(assignments, servers, reserved, KICK_MOVE_SIZE);
            if v < best - 1e-12 {
                best = v;
                continue 'kick;
            }
            for (a, s) in assignments.iter_mut().zip(saved) {
                a.server = s;
            }
            reserved.copy_from_slice(&saved_reserved);
        }
        break;
    }
}

#[derive(Debug, Clone, Copy)]
enum Kick {
    Move(usize, usize),
    Exchange(usize, usize),
}

impl Kick {
    /// Applies the kick; false when it changes nothing.
    fn apply(self, assignments: &mut [FlowAssignment], reserved: &mut [ResourceVector]) -> bool {
        match self {
            Kick::Move(i, to) => {
                let home = assignments[i].server;
                if home == to {
                    return false;
                }
                let d = assignments[i].reserved;
                reserved[home] = reserved[home].sub(d);
                reserved[to] = reserved[to].add(d);
                assignments[i].server = to;
                true
            }
            Kick::Exchange(a, b) => {
                let mut changed = false;
                for f in assignments.iter_mut() {
                    let other = if f.server == a {
                        b
                    } else if f.server == b {
                        a
                    } else {
                        continue;
                    };
                    reserved[f.server] = reserved[f.server].sub(f.reserved);
                    reserved[other] = reserved[other].add(f.reserved);
                    f.server = other;
                    changed = true;
                }
                changed
            }
        }
    }
}

/// Move size of the search after a kick.
const KICK_MOVE_SIZE: usize = 2;

/// First-improvement descent; an infeasible start counts as infinitely
/// imbalanced, so the first feasible state reached is taken.
fn descend(
    assignments: &mut [FlowAssignment],
    servers: &[ServerSpec],
    reserved: &mut [ResourceVector],
    size: usize,
) -> f64 {
    let mut current = if all_fit(reserved, servers) {
        imbalance_of(servers, reserved)
    } else {
        f64::INFINITY
    };
    for _round in 0..256 {
        let accept = |r: &[ResourceVector]| {
            let v = imbalance_of(servers, r);
            (all_fit(r, servers) && v < current - 1e-12).then_some(v)
        };
        match search_move(assignments, servers, reserved, &accept, 0, 0, size) {
            Some(v) => current = v,
            None => break,
        }
    }
    current
}

/// Makes room for a flow that fits nowhere by relocating up to
/// [`MOVE_SIZE`] assigned flows. Returns the server that now has room.
fn make_room(
    assignments: &mut [FlowAssignment],
    servers: &[ServerSpec],
    reserved: &mut [ResourceVector],
    demand: ResourceVector,
) -> Option<usize> {
    let target = |r: &[ResourceVector]| {
        (0..servers.len()).find(|&s| r[s].add(demand).fits_within(servers[s].capacity))
    };
    let accept = |r: &[ResourceVector]| {
        if all_fit(r, servers) {
            target(r).map(|s| s as f64)
        } else {
            None
        }
    };
    search_move(assignments, servers, reserved, &accept, 0, 0, MOVE_SIZE).map(|s| s as usize)
}

/// Depth-first over sets of flows with increasing indices and a new server
/// for each. Applies the first move that `accept` takes and returns its value.
fn search_move(
    assignments: &mut [FlowAssignment],
    servers: &[ServerSpec],
    reserved: &mut [ResourceVector],
    accept: &dyn Fn(&[ResourceVector]) -> Option<f64>,
    from: usize,
    depth: usize,
    size: usize,
) -> Option<f64> {
    if depth > 0 {
        if let Some(v) = accept(reserved) {
            return Some(v);
        }
    }
    if depth == size {
        return None;
    }
    for i in from..assignments.len() {
        let home = assignments[i].server;
        let d = assignments[i].reserved;
        for to in 0..servers.len() {
            if to == home {
                continue;
            }
            let (old_home, old_to) = (reserved[home], reserved[to]);
            reserved[home] = old_home.sub(d);
            reserved[to] = old_to.add(d);
            assignments[i].server = to;
            if let Some(v) = search_move(
                assignments,
                servers,
                reserved,
                accept,
                i + 1,
                depth + 1,
                size,
            ) {
                return Some(v);
            }
            assignments[i].server = home;
            reserved[home] = old_home;
            reserved[to] = old_to;
        }
    }
    None
}

/// Lowest imbalance over every feasible assignment of all flows, or `None`
/// when no assignment places all of them.
pub fn brute_force_imbalance(
    flows: &[FlowRequest],
    servers: &[ServerSpec],
    background: &[ResourceVector],
) -> Option<f64> {
    fn rec(
        i: usize,
        flows: &[FlowRequest],
        servers: &[ServerSpec],
        reserved: &mut Vec<ResourceVector>,
        best: &mut Option<f64>,
    ) {
        if i == flows.len() {
            let v = imbalance_of(servers, reserved);
            if best.is_none_or(|b| v < b) {
                *best = Some(v);
            }
            return;
        }
        for s in 0..servers.len() {
            let after = reserved[s].add(flows[i].demand);
            if after.fits_within(servers[s].capacity) {
                let old = reserved[s];
                reserved[s] = after;
                rec(i + 1, flows, servers, reserved, best);
                reserved[s] = old;
            }
        }
    }
    let mut best = None;
    rec(0, flows, servers, &mut background.to_vec(), &mut best);
    best
}

/// Per-window balancer state: the previous assignment of every flow, so a
/// flow whose signature cannot be estimated keeps its server, and the last
/// forecast, so measured loads can correct the next one.
#[derive(Debug, Clone, Default)]
pub struct Balancer {
    pub previous: Vec<(String, usize, ResourceVector)>,
    pub last_forecast: Option<Vec<NodeLoad>>,
    /// Per-server reservation correction from the last forecast error.
    pub bias: Vec<ResourceVector>,
    /// Minimum drop in forecast imbalance before any flow changes server.
    pub migration_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceStep {
    pub window_index: u64,
    pub plan: AssignmentPlan,
    /// Flows that kept their previous server because no signature was available.
    pub sticky: Vec<String>,
    /// `|forecast - measured|` averaged over servers and resources.
    pub forecast_error: Option<f64>,
}

impl Balancer {
    pub fn new(servers: usize) -> Self {
        Balancer {
            previous: Vec::new(),
            last_forecast: None,
            bias: vec![ResourceVector::ZERO; servers],
            migration_margin: 0.0,
        }
    }

    /// Runs one window: compares the last forecast with `measured`, turns
    /// that error into a reservation bias, and reassigns the flows.
    pub fn step(
        &mut self,
        window_index: u64,
        requests: &[(FlowRequest, bool)],
        servers: &[ServerSpec],
        background: &[ResourceVector],
        measured: Option<&[NodeLoad]>,
    ) -> BalanceStep {
        let mut forecast_error = None;
        if let (Some(forecast), Some(measured)) = (&self.last_forecast, measured) {
            let mut err = 0.0;
            for (s, (f, m)) in forecast.iter().zip(measured).enumerate() {
                let cap = servers[s].capacity;
                let d = |m: f64, f: f64| m - f;
                self.bias[s] = ResourceVector::new(
                    (d(m.cpu, f.cpu) * cap.cpu).max(0.0),
                    (d(m.net, f.net) * cap.net).max(0.0),
                    (d(m.ram, f.ram) * cap.ram).max(0.0),
                );
                err += (m.cpu - f.cpu).abs() + (m.net - f.net).abs() + (m.ram - f.ram).abs();
            }
            forecast_error = Some(err / (3.0 * forecast.len().max(1) as f64));
        }
        let mut base: Vec<ResourceVector> = background
            .iter()
            .zip(&self.bias)
            .map(|(b, e)| b.add(*e))
            .collect();
        let mut sticky = Vec::new();
        let mut fresh = Vec::new();
        let mut kept = Vec::new();
        for (req, estimated) in requests {
            if !*estimated {
                if let Some((_, s, r)) = self.previous.iter().find(|(f, _, _)| *f == req.flow_id) {
                    base[*s] = base[*s].add(*r);
                    sticky.push(req.flow_id.clone());
                    kept.push(FlowAssignment {
                        flow_id: req.flow_id.clone(),
                        class: req.class,
                        server: *s,
                        reserved: *r,
                        window_index,
                    });
                    continue;
                }
            }
            fresh.push(req.clone());
        }
        let mut plan = assign_flows(&fresh, servers, &base, window_index);
        if let Some(stay) = self.keep_plan(&fresh, servers, &base, window_index) {
            let gain = stay.imbalance_after - plan.imbalance_after;
            if stay.deferred.len() <= plan.deferred.len() && !(gain > self.migration_margin) {
                plan = stay;
            }
        }
        plan.assignments.extend(kept);
        self.previous = plan
            .assignments
            .iter()
            .map(|a| (a.flow_id.clone(), a.server, a.reserved))
            .collect();
        self.last_forecast = Some(plan.forecast.clone());
        BalanceStep {
            window_index,
            plan,
            sticky,
            forecast_error,
        }
    }

    /// The plan that leaves every flow on its previous server, if each one
    /// has a previous server and still fits there.
    fn keep_plan(
        &self,
        flows: &[FlowRequest],
        servers: &[ServerSpec],
        base: &[ResourceVector],
        window_index: u64,
    ) -> Option<AssignmentPlan> {
        let mut reserved = base.to_vec();
        let mut assignments = Vec::with_capacity(flows.len());
        for f in flows {
            let &(_, s, _) = self.previous.iter().find(|(id, _, _)| *id == f.flow_id)?;
            reserved[s] = reserved[s].add(f.demand);
            assignments.push(FlowAssignment {
                flow_id: f.flow_id.clone(),
                class: f.class,
                server: s,
                reserved: f.demand,
                window_index,
            });
        }
        if !all_fit(&reserved, servers) {
            return None;
        }
        Some(AssignmentPlan {
            assignments,
            deferred: Vec::new(),
            forecast: loads_of(servers, &reserved),
            imbalance_before: imbalance_of(servers, base),
            imbalance_after: imbalance_of(servers, &reserved),
        })
    }
}
