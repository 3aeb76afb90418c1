//! Least-cost routing over links whose costs are refreshed each announcement
//! interval from the fractal signature of the traffic they carry.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise cost refresh. Boundaries follow the inequalities literally:
/// `H = 0.5` keeps the cost, `σ_var = 1` takes the second branch, and
/// `σ_var = 3` or `H = 0.9` take the full `C0` increment.
pub fn update_cost(c: f64, h: f64, sigma_var: f64, c0: f64) -> Result<f64> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::invalid("C", format!("must be >= 0, got {c}")));
    }
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::invalid("C0", format!("must be > 0, got {c0}")));
    }
    if !(sigma_var >= 0.0 && sigma_var.is_finite()) {
        return Err(Error::invalid(
            "sigma_var",
            format!("must be >= 0, got {sigma_var}"),
        ));
    }
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::invalid("H", format!("must lie in (0, 1], got {h}")));
    }
    Ok(match cost_branch(h, sigma_var) {
        1 => c,
        2 => c + (h - 0.5) * c0,
        3 => c + (h - 0.5) * (sigma_var - 1.0) * c0,
        _ => c + c0,
    })
}

/// Which of the four cost branches applies (1-based).
pub fn cost_branch(h: f64, sigma_var: f64) -> u8 {
    if h <= 0.5 {
        1
    } else if h >= 0.9 || sigma_var >= 3.0 {
        4
    } else if sigma_var <= 1.0 {
        2
    } else {
        3
    }
}

pub type NodeId = usize;
pub type LinkId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub a: NodeId,
    pub b: NodeId,
    pub base_cost: f64,
    /// Current cost after the last announcement.
    pub cost: f64,
    /// Bandwidth that may be reserved by routed flows.
    pub capacity: f64,
    pub channels: Vec<f64>,
    pub allocated: f64,
}

impl Link {
    pub fn residual(&self) -> f64 {
        self.capacity - self.allocated
    }

    fn other(&self, n: NodeId) -> NodeId {
        if self.a == n {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<String>,
    pub links: Vec<Link>,
}

impl Topology {
    pub fn new(nodes: Vec<String>) -> Self {
        Topology {
            nodes,
            links: Vec::new(),
        }
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n == name)
    }

    /// Adds an undirected link; channels default to one channel spanning the link.
    pub fn add_link(
        &mut self,
        name: &str,
        a: &str,
        b: &str,
        base_cost: f64,
        capacity: f64,
    ) -> Result<LinkId> {
        let ia = self
            .node(a)
            .ok_or_else(|| Error::invalid("link", format!("unknown node {a}")))?;
        let ib = self
            .node(b)
            .ok_or_else(|| Error::invalid("link", format!("unknown node {b}")))?;
        if ia == ib {
            return Err(Error::invalid("link", format!("{name} is a self-loop")));
        }
        if !(base_cost > 0.0) {
            return Err(Error::invalid("base_cost", format!("{name}: must be > 0")));
        }
        if !(capacity > 0.0) {
            return Err(Error::invalid("capacity", format!("{name}: must be > 0")));
        }
        self.links.push(Link {
            name: name.to_string(),
            a: ia,
            b: ib,
            base_cost,
            cost: base_cost,
            capacity,
            channels: vec![capacity],
            allocated: 0.0,
        });
        Ok(self.links.len() - 1)
    }

    pub fn link(&self, name: &str) -> Option<LinkId> {
        self.links.iter().position(|l| l.name == name)
    }

    fn incident(&self, n: NodeId) -> impl Iterator<Item = LinkId> + '_ {
        self.links
            .iter()
            .enumerate()
            .filter(move |(_, l)| l.a == n || l.b == n)
            .map(|(i, _)| i)
    }

    /// Every simple path from `src` to `dst`, in a deterministic order.
    pub fn simple_paths(&self, src: NodeId, dst: NodeId) -> Vec<Path> {
        let mut out = Vec::new();
        let mut visited = vec![false; self.nodes.len()];
        let mut stack = Vec::new();
        self.dfs(src, dst, &mut visited, &mut stack, &mut out);
        out
    }

    fn dfs(
        &self,
        at: NodeId,
        dst: NodeId,
        visited: &mut [bool],
        stack: &mut Vec<LinkId>,
        out: &mut Vec<Path>,
    ) {
        if at == dst {
            out.push(Path {
                links: stack.clone(),
            });
            return;
        }
        visited[at] = true;
        for li in self.incident(at) {
            let next = self.links[li].other(at);
            if !visited[next] {
                stack.push(li);
                self.dfs(next, dst, visited, stack, out);
                stack.pop();
            }
        }
        visited[at] = false;
    }

    /// Cheapest path over links with residual bandwidth at least `need`.
    /// Ties resolve toward fewer hops, then lower link indices.
    pub fn shortest_path(&self, src: NodeId, dst: NodeId, need: f64) -> Option<Path> {
        #[derive(PartialEq)]
        struct Entry(f64, usize, NodeId);
        impl Eq for Entry {}
        impl PartialOrd for Entry {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Entry {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0)
                    .then(o.1.cmp(&self.1))
                    .then(o.2.cmp(&self.2))
            }
        }
        let n = self.nodes.len();
        let mut best = vec![(f64::INFINITY, usize::MAX); n];
        let mut via: Vec<Option<LinkId>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        best[src] = (0.0, 0);
        heap.push(Entry(0.0, 0, src));
        while let Some(Entry(d, hops, u)) = heap.pop() {
            if (d, hops) > best[u] {
                continue;
            }
            if u == dst {
                break;
            }
            for li in self.incident(u) {
                let l = &self.links[li];
                if l.residual() + 1e-12 < need {
                    continue;
                }
                let v = l.other(u);
                let cand = (d + l.cost, hops + 1);
                if cand < best[v] {
                    best[v] = cand;
                    via[v] = Some(li);
                    heap.push(Entry(cand.0, cand.1, v));
                }
            }
        }
        if src != dst && via[dst].is_none() {
            return None;
        }
        let mut links = Vec::new();
        let mut at = dst;
        while at != src {
            let li = via[at]?;
            links.push(li);
            at = self.links[li].other(at);
        }
        links.reverse();
        Some(Path { links })
    }

    pub fn path_cost(&self, path: &Path) -> Result<f64> {
        if path.links.is_empty() {
            return Err(Error::invalid("path", "empty path"));
        }
        Ok(path.links.iter().map(|&l| self.links[l].cost).sum())
    }

    pub fn path_names(&self, path: &Path) -> Vec<String> {
        path.links
            .iter()
            .map(|&l| self.links[l].name.clone())
            .collect()
    }

    /// Sets link costs from optional `(H, σ_var)` signatures, starting from
    /// each link's base cost. Returns true when any cost changed.
    pub fn announce(&mut self, signatures: &[Option<(f64, f64)>], c0: f64) -> Result<bool> {
        let mut changed = false;
        for (l, sig) in self.links.iter_mut().zip(signatures) {
            let new = match sig {
                Some((h, s)) => update_cost(l.base_cost, h.clamp(1e-9, 1.0), *s, c0)?,
                None => l.base_cost,
            };
            if new != l.cost {
                l.cost = new;
                changed = true;
            }
        }
        Ok(changed)
    }

    /// Whether `path` is a walk from `src` to `dst` over existing links.
    pub fn connects(&self, path: &Path, src: NodeId, dst: NodeId) -> bool {
        let mut at = src;
        for &l in &path.links {
            let Some(link) = self.links.get(l) else {
                return false;
            };
            at = if link.a == at {
                link.b
            } else if link.b == at {
                link.a
            } else {
                return false;
            };
        }
        !path.links.is_empty() && at == dst
    }

    pub fn clear_allocations(&mut self) {
        self.links.iter_mut().for_each(|l| l.allocated = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub links: Vec<LinkId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub flow_id: String,
    pub class: u32,
    pub priority: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub bandwidth: f64,
    /// May be spread over several paths when no single path has room.
    #[serde(default)]
    pub splittable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathShare {
    pub path: Path,
    pub netx: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedDemand {
    pub flow_id: String,
    pub shares: Vec<PathShare>,
    pub unrouted: f64,
    pub reason: Option<String>,
}

impl RoutedDemand {
    pub fn routed(&self) -> f64 {
        self.shares.iter().map(|s| s.netx).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingOutcome {
    /// In the order the demands were given.
    pub demands: Vec<RoutedDemand>,
    /// `Σ C · Netx` over routed shares.
    pub objective: f64,
}

impl RoutingOutcome {
    pub fn unrouted_bandwidth(&self) -> f64 {
        self.demands.iter().map(|d| d.unrouted).sum()
    }

    /// Objective with unrouted bandwidth charged at `penalty` per unit.
    pub fn penalized(&self, penalty: f64) -> f64 {
        self.objective + penalty * self.unrouted_bandwidth()
    }
}

/// Penalty per unrouted bandwidth unit: above any simple path's cost, and
/// proportional to the costs so rescaling them does not change the optimum.
pub fn unrouted_penalty(topo: &Topology) -> f64 {
    2.0 * topo.links.iter().map(|l| l.cost).sum::<f64>()
}

/// Greedy routing followed by [`improve_routing`].
pub fn route_flows(topo: &mut Topology, demands: &[Demand]) -> Result<RoutingOutcome> {
    let greedy = route_flows_greedy(topo, demands)?;
    improve_routing(topo, demands, greedy)
}

/// Routing with hysteresis. Each demand first tries to keep its incumbent
/// path; demands without one, or whose path no longer fits, are routed
/// greedily around the kept ones. A fresh [`route_flows`] outcome replaces
/// this only when its penalized objective is lower by more than `margin`
/// (relative).
pub fn route_flows_sticky(
    topo: &mut Topology,
    demands: &[Demand],
    incumbent: &[Option<Path>],
    margin: f64,
) -> Result<RoutingOutcome> {
    if incumbent.len() != demands.len() {
        return Err(Error::invalid("incumbent", "one entry per demand"));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::invalid(
            "margin",
            format!("must be >= 0, got {margin}"),
        ));
    }
    let penalty = unrouted_penalty(topo);
    let mut fresh_topo = topo.clone();
    let fresh = route_flows(&mut fresh_topo, demands)?;

    let mut keep_topo = topo.clone();
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&demands[i], &demands[j]);
        a.priority
            .cmp(&b.priority)
            .then(b.bandwidth.total_cmp(&a.bandwidth))
            .then(i.cmp(&j))
    });
    let mut results: Vec<Option<RoutedDemand>> = vec![None; demands.len()];
    let mut rest = Vec::new();
    for i in order {
        let d = &demands[i];
        match &incumbent[i] {
            Some(p)
                if d.bandwidth > 0.0
                    && keep_topo.connects(p, d.src, d.dst)
                    && p.links
                        .iter()
                        .all(|&l| keep_topo.links[l].residual() + 1e-12 >= d.bandwidth) =>
            {
                let mut shares = Vec::new();
                allocate(&mut keep_topo, p, d.bandwidth, &mut shares)?;
                results[i] = Some(RoutedDemand {
                    flow_id: d.flow_id.clone(),
                    shares,
                    unrouted: 0.0,
                    reason: None,
                });
            }
            _ => rest.push(i),
        }
    }
    let rest_demands: Vec<Demand> = rest.iter().map(|&i| demands[i].clone()).collect();
    let routed = route_flows_greedy(&mut keep_topo, &rest_demands)?;
    for (i, r) in rest.into_iter().zip(routed.demands) {
        results[i] = Some(r);
    }
    let kept: Vec<RoutedDemand> = results
        .into_iter()
        .map(|r| r.expect("every demand visited"))
        .collect();
    let keep = RoutingOutcome {
        objective: objective_of(&kept),
        demands: kept,
    };

    let (a, b) = (fresh.penalized(penalty), keep.penalized(penalty));
    if a < b - margin * b.abs() {
        *topo = fresh_topo;
        Ok(fresh)
    } else {
        *topo = keep_topo;
        Ok(keep)
    }
}

/// Greedy successive least-cost routing. Demands are taken by priority,
/// then descending bandwidth; each goes on the cheapest path that still has
/// room for all of it. A splittable demand that fits nowhere whole is spread
/// over successive cheapest paths. Allocations are added to `topo`.
pub fn route_flows_greedy(topo: &mut Topology, demands: &[Demand]) -> Result<RoutingOutcome> {
    for d in demands {
        if d.src >= topo.nodes.len() || d.dst >= topo.nodes.len() {
            return Err(Error::invalid(
                "demand",
                format!("{}: unknown endpoint", d.flow_id),
            ));
        }
        if !(d.bandwidth >= 0.0 && d.bandwidth.is_finite()) {
            return Err(Error::invalid(
                "bandwidth",
                format!("{}: must be >= 0", d.flow_id),
            ));
        }
    }
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&demands[i], &demands[j]);
        a.priority
            .cmp(&b.priority)
            .then(b.bandwidth.total_cmp(&a.bandwidth))
            .then(i.cmp(&j))
    });
    let mut results: Vec<Option<RoutedDemand>> = vec![None; demands.len()];
    for i in order {
        let d = &demands[i];
        let mut shares = Vec::new();
        let mut remaining = d.bandwidth;
        let mut reason = None;
        if remaining > 0.0 {
            if let Some(p) = topo.shortest_path(d.src, d.dst, remaining) {
                allocate(topo, &p, remaining, &mut shares)?;
                remaining = 0.0;
            } else if topo.shortest_path(d.src, d.dst, 0.0).is_none() {
                reason = Some("disconnected endpoints".to_string());
            } else if d.splittable {
                while remaining > 1e-12 {
                    let Some(p) = topo.shortest_path(d.src, d.dst, 1e-9) else {
                        break;
                    };
                    let room = p
                        .links
                        .iter()
                        .map(|&l| topo.links[l].residual())
                        .fold(f64::INFINITY, f64::min);
                    let take = room.min(remaining);
                    allocate(topo, &p, take, &mut shares)?;
                    remaining -= take;
                }
                if remaining > 1e-12 {
                    reason = Some("insufficient capacity".to_string());
                } else {
                    remaining = 0.0;
                }
            } else {
                reason = Some("no path with enough residual capacity".to_string());
            }
        }
        results[i] = Some(RoutedDemand {
            flow_id: d.flow_id.clone(),
            shares,
            unrouted: remaining,
            reason,
        });
    }
    let demands: Vec<RoutedDemand> = results
        .into_iter()
        .map(|r| r.expect("every demand visited"))
        .collect();
    let objective = demands
        .iter()
        .flat_map(|d| d.shares.iter())
        .map(|s| s.cost * s.netx)
        .sum();
    Ok(RoutingOutcome { demands, objective })
}

fn objective_of(demands: &[RoutedDemand]) -> f64 {
    demands
        .iter()
        .flat_map(|d| d.shares.iter())
        .map(|s| s.cost * s.netx)
        .sum()
}

fn release(topo: &mut Topology, r: &RoutedDemand) {
    for s in &r.shares {
        for &l in &s.path.links {
            topo.links[l].allocated -= s.netx;
        }
    }
}

/// Rip-up and re-route. A move pins one unsplittable demand to one of its
/// simple paths and re-routes a set of other demands (none, any single one,
/// or all of them) greedily around it. A move is kept only when the
/// objective, with unrouted bandwidth charged at [`unrouted_penalty`], drops.
/// Repeats until no move helps.
pub fn improve_routing(
    topo: &mut Topology,
    demands: &[Demand],
    mut outcome: RoutingOutcome,
) -> Result<RoutingOutcome> {
    let penalty = unrouted_penalty(topo);
    let movable: Vec<usize> = (0..demands.len())
        .filter(|&i| !demands[i].splittable && demands[i].bandwidth > 0.0)
        .collect();
    let paths: Vec<Vec<Path>> = demands
        .iter()
        .map(|d| topo.simple_paths(d.src, d.dst))
        .collect();
    let mut moves: Vec<(usize, Vec<usize>)> = Vec::new();
    for &i in &movable {
        let others: Vec<usize> = movable.iter().copied().filter(|&j| j != i).collect();
        moves.push((i, Vec::new()));
        for &j in &others {
            moves.push((i, vec![j]));
        }
        if others.len() > 1 {
            moves.push((i, others));
        }
    }
    let penalized = |rs: &[RoutedDemand]| {
        objective_of(rs) + penalty * rs.iter().map(|d| d.unrouted).sum::<f64>()
    };
    let mut current = penalized(&outcome.demands);
    for _round in 0..64 {
        let mut improved = false;
        for (pinned, rerouted) in &moves {
            for p in &paths[*pinned] {
                release(topo, &outcome.demands[*pinned]);
                rerouted
                    .iter()
                    .for_each(|&j| release(topo, &outcome.demands[j]));
                let mut trial: Vec<(usize, RoutedDemand)> = Vec::new();
                let d = &demands[*pinned];
                if p.links
                    .iter()
                    .all(|&l| topo.links[l].residual() + 1e-12 >= d.bandwidth)
                {
                    let mut shares = Vec::new();
                    allocate(topo, p, d.bandwidth, &mut shares)?;
                    trial.push((
                        *pinned,
                        RoutedDemand {
                            flow_id: d.flow_id.clone(),
                            shares,
                            unrouted: 0.0,
                            reason: None,
                        },
                    ));
                    for &j in rerouted {
                        let d = &demands[j];
                        let mut shares = Vec::new();
                        let (unrouted, reason) = match topo.shortest_path(d.src, d.dst, d.bandwidth)
                        {
                            Some(p) => {
                                allocate(topo, &p, d.bandwidth, &mut shares)?;
                                (0.0, None)
                            }
                            None => (
                                d.bandwidth,
                                Some("no path with enough residual capacity".to_string()),
                            ),
                        };
                        trial.push((
                            j,
                            RoutedDemand {
                                flow_id: d.flow_id.clone(),
                                shares,
                                unrouted,
                                reason,
                            },
                        ));
                    }
                }
                let accepted = trial.len() == rerouted.len() + 1 && {
                    let mut candidate = outcome.demands.clone();
                    for (i, r) in &trial {
                        candidate[*i] = r.clone();
                    }
                    let value = penalized(&candidate);
                    if value < current - 1e-9 * current.abs().max(1.0) {
                        outcome.demands = candidate;
                        current = value;
                        true
                    } else {
                        false
                    }
                };
                if accepted {
                    improved = true;
                } else {
                    trial.iter().for_each(|(_, r)| release(topo, r));
                    for &i in std::iter::once(pinned).chain(rerouted) {
                        for s in &outcome.demands[i].shares {
                            for &l in &s.path.links {
                                topo.links[l].allocated += s.netx;
                            }
                        }
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    outcome.objective = objective_of(&outcome.demands);
    Ok(outcome)
}

fn allocate(
    topo: &mut Topology,
    path: &Path,
    netx: f64,
    shares: &mut Vec<PathShare>,
) -> Result<()> {
    let cost = topo.path_cost(path)?;
    for &l in &path.links {
        topo.links[l].allocated += netx;
    }
    shares.push(PathShare {
        path: path.clone(),
        netx,
        cost,
    });
    Ok(())
}

/// Per-link allocation never exceeds capacity, and each demand's shares plus
/// its unrouted remainder add up to its bandwidth.
pub fn check_conservation(topo: &Topology, demands: &[Demand], outcome: &RoutingOutcome) -> bool {
    let mut per_link = vec![0.0; topo.links.len()];
    for r in &outcome.demands {
        for s in &r.shares {
            for &l in &s.path.links {
                per_link[l] += s.netx;
            }
        }
    }
    let links_ok = topo.links.iter().zip(&per_link).all(|(l, &sum)| {
        sum <= l.capacity * (1.0 + 1e-12) && (sum - l.allocated).abs() <= 1e-9 * l.capacity.max(1.0)
    });
    let demands_ok = demands
        .iter()
        .zip(&outcome.demands)
        .all(|(d, r)| (r.routed() + r.unrouted - d.bandwidth).abs() <= 1e-9 * d.bandwidth.max(1.0));
    links_ok && demands_ok
}

/// Brute-force optimum of the penalized objective over unsplittable
/// assignments: each demand takes one simple path or stays unrouted.
pub fn brute_force_objective(topo: &Topology, demands: &[Demand], penalty: f64) -> f64 {
    let options: Vec<Vec<Path>> = demands
        .iter()
        .map(|d| topo.simple_paths(d.src, d.dst))
        .collect();
    let mut residual: Vec<f64> = topo
        .links
        .iter()
        .map(|l| l.capacity - l.allocated)
        .collect();
    let mut best = f64::INFINITY;
    #[allow(clippy::too_many_arguments)]
    fn rec(
        i: usize,
        acc: f64,
        topo: &Topology,
        demands: &[Demand],
        options: &[Vec<Path>],
        residual: &mut [f64],
        penalty: f64,
        best: &mut f64,
    ) {
        if i == demands.len() {
            *best = best.min(acc);
            return;
        }
        let d = &demands[i];
        rec(
            i + 1,
            acc + penalty * d.bandwidth,
            topo,
            demands,
            options,
            residual,
            penalty,
            best,
        );
        for p in &options[i] {
            if p.links.iter().all(|&l| residual[l] + 1e-12 >= d.bandwidth) {
                let cost: f64 = p.links.iter().map(|&l| topo.links[l].cost).sum();
                p.links.iter().for_each(|&l| residual[l] -= d.bandwidth);
                rec(
                    i + 1,
                    acc + cost * d.bandwidth,
                    topo,
                    demands,
                    options,
                    residual,
                    penalty,
                    best,
                );
                p.links.iter().for_each(|&l| residual[l] += d.bandwidth);
            }
        }
    }
    rec(
        0,
        0.0,
        topo,
        demands,
        &options,
        &mut residual,
        penalty,
        &mut best,
    );
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_branches_by_hand() {
        assert_eq!(update_cost(100.0, 0.5, 7.0, 10.0).unwrap(), 100.0);
        assert_eq!(
            update_cost(100.0, 0.7, 0.8, 10.0).unwrap(),
            100.0 + (0.7 - 0.5) * 10.0
        );
        assert_eq!(
            update_cost(100.0, 0.7, 2.0, 10.0).unwrap(),
            100.0 + (0.7 - 0.5) * (2.0 - 1.0) * 10.0
        );
        assert_eq!(update_cost(100.0, 0.95, 0.5, 10.0).unwrap(), 110.0);
        assert!((update_cost(100.0, 0.7, 0.8, 10.0).unwrap() - 102.0).abs() < 1e-12);
    }

    #[test]
    fn cost_preconditions() {
        assert!(update_cost(-1.0, 0.7, 1.0, 1.0).is_err());
        assert!(update_cost(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(update_cost(1.0, 1.2, 1.0, 1.0).is_err());
        assert!(update_cost(1.0, 0.7, -0.1, 1.0).is_err());
        assert!(update_cost(1.0, 0.7, 1.0, 0.0).is_err());
    }

    fn two_paths() -> Topology {
        let mut t = Topology::new(vec!["s".into(), "a".into(), "b".into(), "d".into()]);
        t.add_link("sa", "s", "a", 5.0, 10.0).unwrap();
        t.add_link("ad", "a", "d", 5.0, 10.0).unwrap();
        t.add_link("sb", "s", "b", 7.0, 10.0).unwrap();
        t.add_link("bd", "b", "d", 7.0, 10.0).unwrap();
        t
    }

    fn demand(id: &str, src: NodeId, dst: NodeId, bw: f64) -> Demand {
        Demand {
            flow_id: id.into(),
            class: 0,
            priority: 0,
            src,
            dst,
            bandwidth: bw,
            splittable: false,
        }
    }

    #[test]
    fn path_cost_sums() {
        let mut t = Topology::new(vec!["a".into(), "b".into(), "c".into(), "d".into()]);
        t.add_link("x", "a", "b", 3.0, 1.0).unwrap();
        t.add_link("y", "b", "c", 4.0, 1.0).unwrap();
        t.add_link("z", "c", "d", 5.0, 1.0).unwrap();
        let p = Path {
            links: vec![0, 1, 2],
        };
        assert_eq!(t.path_cost(&p).unwrap(), 12.0);
        assert_eq!(t.path_cost(&Path { links: vec![0] }).unwrap(), 3.0);
        assert!(t.path_cost(&Path { links: vec![] }).is_err());
        t.links[1].cost += 2.5;
        assert_eq!(t.path_cost(&p).unwrap(), 14.5);
    }

    #[test]
    fn single_demand_takes_cheap_path() {
        let mut t = two_paths();
        let out = route_flows(&mut t, &[demand("f", 0, 3, 4.0)]).unwrap();
        assert_eq!(out.demands[0].shares[0].path.links, vec![0, 1]);
        assert_eq!(out.objective, 10.0 * 4.0);
    }

    #[test]
    fn second_demand_spills_to_other_path() {
        let mut t = two_paths();
        let ds = [demand("f", 0, 3, 6.0), demand("g", 0, 3, 6.0)];
        let out = route_flows(&mut t, &ds).unwrap();
        assert_eq!(out.demands[1].shares[0].path.links, vec![2, 3]);
        assert!(check_conservation(&t, &ds, &out));
    }

    #[test]
    fn oversized_demand_is_reported() {
        let mut t = two_paths();
        let ds = [demand("f", 0, 3, 25.0)];
        let out = route_flows(&mut t, &ds).unwrap();
        assert_eq!(out.unrouted_bandwidth(), 25.0);
        let mut split = ds.clone();
        split[0].splittable = true;
        let mut t = two_paths();
        let out = route_flows(&mut t, &split).unwrap();
        assert_eq!(out.demands[0].shares.len(), 2);
        assert!((out.unrouted_bandwidth() - 5.0).abs() < 1e-9);
        assert!(check_conservation(&t, &split, &out));
    }

    #[test]
    fn disconnected_endpoints() {
        let mut t = Topology::new(vec!["a".into(), "b".into(), "c".into()]);
        t.add_link("ab", "a", "b", 1.0, 1.0).unwrap();
        let out = route_flows(&mut t, &[demand("f", 0, 2, 0.5)]).unwrap();
        assert_eq!(
            out.demands[0].reason.as_deref(),
            Some("disconnected endpoints")
        );
    }

    #[test]
    fn announcement_breaks_ties() {
        let mut t = Topology::new(vec!["s".into(), "d".into()]);
        t.add_link("p", "s", "d", 10.0, 10.0).unwrap();
        t.add_link("q", "s", "d", 10.0, 10.0).unwrap();
        assert!(!t.announce(&[None, None], 5.0).unwrap());
        assert_eq!(t.shortest_path(0, 1, 1.0).unwrap().links, vec![0]);
        assert!(t
            .announce(&[Some((0.95, 0.5)), Some((0.5, 0.5))], 5.0)
            .unwrap());
        assert_eq!(t.links[0].cost, 15.0);
        assert_eq!(t.shortest_path(0, 1, 1.0).unwrap().links, vec![1]);
        assert!(!t
            .announce(&[Some((0.95, 0.5)), Some((0.5, 0.5))], 5.0)
            .unwrap());
    }

    #[test]
    fn triangle_greedy_near_optimum() {
        let mut t = Topology::new(vec!["a".into(), "b".into(), "c".into()]);
        t.add_link("ab", "a", "b", 4.0, 5.0).unwrap();
        t.add_link("ac", "a", "c", 3.0, 5.0).unwrap();
        t.add_link("cb", "c", "b", 3.0, 5.0).unwrap();
        let ds = [demand("f", 0, 1, 4.0), demand("g", 0, 1, 4.0)];
        let pen = unrouted_penalty(&t);
        let opt = brute_force_objective(&t, &ds, pen);
        let out = route_flows(&mut t, &ds).unwrap();
        assert!(out.penalized(pen) <= 1.10 * opt);
        assert!(check_conservation(&t, &ds, &out));
        assert_eq!(out.unrouted_bandwidth(), 0.0);
    }
}
