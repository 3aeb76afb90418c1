//! End-to-end acceptance checks. Runs as a plain binary so every verdict is
//! printed, one line per criterion, whether it passes or not.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fractal_qos::balancer::{assign_flows, system_imbalance, FlowRequest, NodeLoad, ServerSpec};
use fractal_qos::capacity::{calibrate, CalibrationTable, GridSpec};
use fractal_qos::estimator::{
    default_scales, estimate_generalized_hurst, hurst_range, signature_of, DEFAULT_Q_GRID,
};
use fractal_qos::generator::{generate_cascade, generate_fgn};
use fractal_qos::queue::ResourceVector;
use fractal_qos::routing::{route_flows, update_cost, Demand, Topology};
use fractal_qos::scenario::report::{compare_methods, measured};
use fractal_qos::scenario::{run_once, Method, RunOutput, ScenarioConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- estimator

fn fgn_recovery() -> Verdict {
    let t0 = Instant::now();
    let n = 1 << 15;
    let mut worst_seed = 0.0f64;
    let mut worst_mean = 0.0f64;
    let mut worst_range = 0.0f64;
    for &h in &[0.6, 0.7, 0.8] {
        let mut sum = 0.0;
        for seed in 0..20 {
            let x = generate_fgn(h, n, 1.0, 1000 + seed).unwrap();
            let fit = estimate_generalized_hurst(&x, &DEFAULT_Q_GRID, &default_scales(n)).unwrap();
            let est = fit.h(2.0).unwrap();
            sum += est;
            worst_seed = worst_seed.max((est - h).abs());
            worst_range = worst_range.max(hurst_range(&fit).unwrap().abs());
        }
        worst_mean = worst_mean.max((sum / 20.0 - h).abs());
    }
    let el = t0.elapsed();
    verdict(
        worst_mean <= 0.05 && worst_seed <= 0.1 && worst_range <= 0.15 && el < Duration::from_secs(60),
        format!(
            "max |mean H - H| {worst_mean:.4} (<= 0.05), max per-seed {worst_seed:.4} (<= 0.1), max |dh| {worst_range:.4} (<= 0.15), {:.1} s (< 60)",
            secs(el)
        ),
    )
}

fn analytic_h(w: f64, q: f64) -> f64 {
    let tau = -(w.powf(q) + (1.0 - w).powf(q)).log2();
    (tau + 1.0) / q
}

fn cascade_spectrum() -> Verdict {
    let t0 = Instant::now();
    let mut worst_rel = 0.0f64;
    for seed in 0..5 {
        let t = generate_cascade(14, 0.7, 50 + seed).unwrap();
        let fit = estimate_generalized_hurst(t.values(), &DEFAULT_Q_GRID, &default_scales(t.len()))
            .unwrap();
        for q in [-5.0, -2.0, 2.0, 5.0] {
            let a = analytic_h(0.7, q);
            worst_rel = worst_rel.max((fit.h(q).unwrap() - a).abs() / a.abs());
        }
    }
    let dh = |w: f64| {
        (0..5)
            .map(|seed| {
                let t = generate_cascade(14, w, 50 + seed).unwrap();
                hurst_range(
                    &estimate_generalized_hurst(
                        t.values(),
                        &DEFAULT_Q_GRID,
                        &default_scales(t.len()),
                    )
                    .unwrap(),
                )
                .unwrap()
            })
            .sum::<f64>()
            / 5.0
    };
    let (d70, d55, d51) = (dh(0.7), dh(0.55), dh(0.51));
    let el = t0.elapsed();
    verdict(
        worst_rel <= 0.2 && d70 > d55 && d55 > d51 && el < Duration::from_secs(30),
        format!(
            "max relative h(q) error {worst_rel:.3} (<= 0.2); dh(0.7) {d70:.3} > dh(0.55) {d55:.3} > dh(0.51) {d51:.3}; {:.1} s (< 30)",
            secs(el)
        ),
    )
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn spread_tracks_variation() -> Verdict {
    let (mut dh, mut cv) = (Vec::new(), Vec::new());
    for &w in &[0.55, 0.65, 0.75, 0.85] {
        for seed in 0..10 {
            let t = generate_cascade(14, w, 300 + seed).unwrap();
            let s = signature_of(t.values()).unwrap();
            dh.push(s.delta_h_raw);
            cv.push(s.sigma_var);
        }
    }
    let rho = pearson(&ranks(&dh), &ranks(&cv));
    verdict(
        rho > 0.8,
        format!("Spearman(dh, sigma_var) = {rho:.3} over 40 cascades (> 0.8)"),
    )
}

// ---------------------------------------------------------------- routing

fn cost_rule() -> Verdict {
    // C = 10, C0 = 2; every expected value is exact in binary
    let cases: [(f64, f64, f64); 16] = [
        (0.3, 0.5, 10.0),
        (0.3, 4.0, 10.0),
        (0.5, 0.5, 10.0),
        (0.5, 1.0, 10.0),
        (0.5, 3.0, 10.0),
        (0.5, 5.0, 10.0),
        (0.75, 0.5, 10.5),
        (0.75, 1.0, 10.5),
        (0.875, 1.0, 10.75),
        (0.625, 2.5, 10.375),
        (0.75, 2.0, 10.5),
        (0.75, 3.0, 12.0),
        (0.9, 0.5, 12.0),
        (0.9, 1.0, 12.0),
        (0.9, 3.0, 12.0),
        (1.0, 2.0, 12.0),
    ];
    let mut bad = Vec::new();
    for &(h, s, want) in &cases {
        let got = update_cost(10.0, h, s, 2.0).unwrap();
        if got != want {
            bad.push(format!("({h}, {s}) -> {got} != {want}"));
        }
    }
    // dense sweep: exactly one case of the rule holds and the cost stays in [C, C + C0]
    let mut sweep_bad = 0usize;
    let mut points = 0usize;
    for hi in 1..=1000 {
        for si in 0..=500 {
            let (h, s) = (hi as f64 / 1000.0, si as f64 / 100.0);
            let cases = [
                h <= 0.5,
                h > 0.5 && h < 0.9 && s <= 1.0,
                h > 0.5 && h < 0.9 && s > 1.0 && s < 3.0,
                h >= 0.9 || (h > 0.5 && s >= 3.0),
            ];
            points += 1;
            let (c, c0) = (7.0, 1.5);
            let v = update_cost(c, h, s, c0).unwrap();
            let expect = match cases.iter().position(|&b| b) {
                Some(0) => c,
                Some(1) => c + (h - 0.5) * c0,
                Some(2) => c + (h - 0.5) * (s - 1.0) * c0,
                _ => c + c0,
            };
            if cases.iter().filter(|&&b| b).count() != 1
                || !(c..=c + c0).contains(&v)
                || v != expect
            {
                sweep_bad += 1;
            }
        }
    }
    verdict(
        bad.is_empty() && sweep_bad == 0,
        format!(
            "{} of {} hand-evaluated points match exactly; {sweep_bad} of {points} sweep points outside a single case or [C, C+C0]{}",
            cases.len() - bad.len(),
            cases.len(),
            if bad.is_empty() { String::new() } else { format!(": {}", bad.join("; ")) }
        ),
    )
}

struct RoutingInstance {
    topo: Topology,
    demands: Vec<Demand>,
}

fn random_routing(rng: &mut ChaCha8Rng) -> RoutingInstance {
    let n = rng.random_range(2..=4usize);
    let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let mut topo = Topology::new(names.clone());
    for l in 0..rng.random_range(1..=6usize) {
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        let cost = rng.random_range(1..=9) as f64;
        let cap = rng.random_range(1..=10) as f64;
        topo.add_link(&format!("l{l}"), &names[a], &names[b], cost, cap)
            .unwrap();
    }
    let demands = (0..rng.random_range(1..=3usize))
        .map(|i| {
            let src = rng.random_range(0..n);
            let dst = (src + rng.random_range(1..n)) % n;
            Demand {
                flow_id: format!("d{i}"),
                class: 0,
                priority: rng.random_range(0..3),
                src,
                dst,
                bandwidth: rng.random_range(1..=6) as f64,
                splittable: false,
            }
        })
        .collect();
    RoutingInstance { topo, demands }
}

/// Node-simple paths as link lists, by depth-first search.
fn enumerate_paths(topo: &Topology, src: usize, dst: usize) -> Vec<Vec<usize>> {
    fn dfs(
        topo: &Topology,
        at: usize,
        dst: usize,
        seen: &mut Vec<bool>,
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if at == dst {
            out.push(path.clone());
            return;
        }
        for (id, l) in topo.links.iter().enumerate() {
            let next = if l.a == at {
                l.b
            } else if l.b == at {
                l.a
            } else {
                continue;
            };
            if seen[next] {
                continue;
            }
            seen[next] = true;
            path.push(id);
            dfs(topo, next, dst, seen, path, out);
            path.pop();
            seen[next] = false;
        }
    }
    let mut seen = vec![false; topo.nodes.len()];
    seen[src] = true;
    let mut out = Vec::new();
    dfs(topo, src, dst, &mut seen, &mut Vec::new(), &mut out);
    out
}

/// Every demand on one path or unrouted; unrouted bandwidth costs `penalty`.
fn routing_optimum(inst: &RoutingInstance, penalty: f64) -> f64 {
    let options: Vec<Vec<Vec<usize>>> = inst
        .demands
        .iter()
        .map(|d| enumerate_paths(&inst.topo, d.src, d.dst))
        .collect();
    let mut choice = vec![0usize; inst.demands.len()];
    let mut best = f64::INFINITY;
    loop {
        let mut load = vec![0.0; inst.topo.links.len()];
        let mut total = 0.0;
        for (i, d) in inst.demands.iter().enumerate() {
            if choice[i] == 0 {
                total += penalty * d.bandwidth;
            } else {
                for &l in &options[i][choice[i] - 1] {
                    load[l] += d.bandwidth;
                    total += inst.topo.links[l].cost * d.bandwidth;
                }
            }
        }
        if load
            .iter()
            .zip(&inst.topo.links)
            .all(|(x, l)| *x <= l.capacity)
        {
            best = best.min(total);
        }
        let mut k = 0;
        while k < choice.len() {
            choice[k] += 1;
            if choice[k] <= options[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == choice.len() {
            return best;
        }
    }
}

fn routing_oracle() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let count = 5000;
    let (mut worst, mut over, mut broken) = (1.0f64, 0usize, 0usize);
    for _ in 0..count {
        let inst = random_routing(&mut rng);
        let penalty = 2.0 * inst.topo.links.iter().map(|l| l.cost).sum::<f64>();
        let mut topo = inst.topo.clone();
        let out = route_flows(&mut topo, &inst.demands).unwrap();
        let mut load = vec![0.0; topo.links.len()];
        for (d, r) in inst.demands.iter().zip(&out.demands) {
            if r.shares.len() > 1 || r.routed() + r.unrouted != d.bandwidth {
                broken += 1;
            }
            for s in &r.shares {
                let mut at = d.src;
                for &l in &s.path.links {
                    let link = &topo.links[l];
                    at = if link.a == at {
                        link.b
                    } else if link.b == at {
                        link.a
                    } else {
                        usize::MAX
                    };
                    load[l] += s.netx;
                }
                if at != d.dst {
                    broken += 1;
                }
            }
        }
        if load
            .iter()
            .zip(&topo.links)
            .any(|(x, l)| *x > l.capacity || *x != l.allocated)
        {
            broken += 1;
        }
        let greedy = out.objective + penalty * out.unrouted_bandwidth();
        let opt = routing_optimum(&inst, penalty);
        let ratio = greedy / opt;
        worst = worst.max(ratio);
        if ratio > 1.10 {
            over += 1;
        }
    }
    let el = t0.elapsed();
    verdict(
        over == 0 && broken == 0 && el < Duration::from_secs(60),
        format!(
            "{count} instances: worst objective / optimum {worst:.4} (<= 1.10), {over} over, {broken} conservation or capacity breaches; {:.1} s (< 60)",
            secs(el)
        ),
    )
}

// ---------------------------------------------------------------- calibration

fn table_properties(shipped: &CalibrationTable) -> Verdict {
    let t0 = Instant::now();
    let table = calibrate(
        &GridSpec {
            base_seed: shipped.metadata.base_seed,
            ..GridSpec::default()
        },
        0.01,
        10,
    )
    .unwrap();
    let el = t0.elapsed();
    let (nr, nh, ns) = table.dims();
    let mut non_iso = 0;
    for r in 0..nr {
        for h in 0..nh {
            for s in 0..ns {
                let v = table.cell(r, h, s);
                let prev = [
                    (r > 0).then(|| table.cell(r - 1, h, s)),
                    (h > 0).then(|| table.cell(r, h - 1, s)),
                    (s > 0).then(|| table.cell(r, h, s - 1)),
                ];
                non_iso += prev.iter().flatten().filter(|p| **p > v).count();
            }
        }
    }
    let mut round_trip_bad = 0;
    let mut checked = 0;
    for &rho in &table.rho {
        for &h in &table.hurst {
            for &s in &table.sigma_var {
                let net = 1.0 / rho;
                let b = table.required_buffer(net, 1.0, h, s);
                if b.saturated {
                    continue;
                }
                checked += 1;
                let back = table.required_capacity(b.buffer, 1.0, h, s).capacity;
                if back > net * (1.0 + 1e-12) {
                    round_trip_bad += 1;
                }
            }
        }
    }
    let overload = calibrate(
        &GridSpec {
            rho: vec![0.5, 1.0, 1.2],
            hurst: vec![0.6],
            sigma_var: vec![0.5],
            trace_len: 4096,
            ..GridSpec::default()
        },
        0.01,
        2,
    )
    .unwrap();
    let saturated_ok = overload.is_saturated(1, 0, 0)
        && overload.is_saturated(2, 0, 0)
        && !overload.is_saturated(0, 0, 0)
        && table.required_buffer(1.0, 1.0, 0.7, 1.0).saturated
        && table.required_buffer(1.0, 1.25, 0.7, 1.0).saturated;
    let same = table == *shipped;
    verdict(
        non_iso == 0 && round_trip_bad == 0 && saturated_ok && el < Duration::from_secs(900),
        format!(
            "{non_iso} isotonic breaks, {round_trip_bad} of {checked} grid round trips above identity, rho >= 1 saturated: {saturated_ok}; default grid calibrated in {:.1} s (< 900); matches shipped table: {same}",
            secs(el)
        ),
    )
}

// ---------------------------------------------------------------- simulation

fn window_ok(cfg: &ScenarioConfig, w: &fractal_qos::scenario::WindowMetrics) -> bool {
    w.classes
        .iter()
        .all(|c| c.loss().is_none_or(|l| l <= cfg.loss_target))
}

fn controller_efficacy(table: &CalibrationTable, runs: &mut Vec<RunOutput>) -> Verdict {
    let cfg = ScenarioConfig::load(&scenario("single_node.toml")).unwrap();
    let mut tally = |methods: &[Method]| {
        let c = cfg.with_methods(methods);
        let (mut ok, mut total) = (0, 0);
        for &seed in &cfg.seeds {
            let run = run_once(&c, table, seed).unwrap();
            for w in measured(&c, &run) {
                total += 1;
                ok += window_ok(&c, w) as usize;
            }
            runs.push(run);
        }
        (ok, total)
    };
    let (off_ok, off_total) = tally(&[]);
    let (on_ok, on_total) = tally(&[Method::CapacityControl]);
    let share = on_ok as f64 / on_total as f64;
    verdict(
        off_ok < off_total && share >= 0.9,
        format!(
            "controller off: {} of {off_total} windows over the {} loss target (>= 1); controller on: {on_ok} of {on_total} within ({:.1}%, >= 90%)",
            off_total - off_ok,
            cfg.loss_target,
            100.0 * share
        ),
    )
}

fn random_servers(rng: &mut ChaCha8Rng, identical: bool) -> Vec<ServerSpec> {
    let n = rng.random_range(2..=3usize);
    let base = rng.random_range(8.0..20.0);
    (0..n)
        .map(|i| {
            let mut c = || {
                if identical {
                    base
                } else {
                    rng.random_range(5.0..20.0)
                }
            };
            ServerSpec {
                id: format!("s{i}"),
                capacity: ResourceVector::new(c(), c(), c()),
            }
        })
        .collect()
}

fn random_flows(rng: &mut ChaCha8Rng) -> Vec<FlowRequest> {
    let mut v = || rng.random_range(0.5..2.0);
    let classes: Vec<ResourceVector> = (0..3).map(|_| ResourceVector::new(v(), v(), v())).collect();
    (0..rng.random_range(1..=6usize))
        .map(|i| {
            let c = rng.random_range(0..3usize);
            FlowRequest {
                flow_id: format!("f{i}"),
                class: c as u32,
                priority: c as u32,
                demand: classes[c].scale(rng.random_range(0.5..3.0)),
            }
        })
        .collect()
}

fn imbalance_of(servers: &[ServerSpec], reserved: &[[f64; 3]]) -> f64 {
    let loads: Vec<NodeLoad> = servers
        .iter()
        .zip(reserved)
        .map(|(s, r)| {
            NodeLoad::new(
                s.id.clone(),
                r[0] / s.capacity.cpu,
                r[2] / s.capacity.ram,
                r[1] / s.capacity.net,
            )
        })
        .collect();
    system_imbalance(&loads, 0).system_imbalance
}

/// Lowest imbalance over all placements that fit, by odometer enumeration.
fn balance_optimum(flows: &[FlowRequest], servers: &[ServerSpec]) -> Option<f64> {
    let mut choice = vec![0usize; flows.len()];
    let mut best: Option<f64> = None;
    loop {
        let mut reserved = vec![[0.0; 3]; servers.len()];
        for (f, &s) in flows.iter().zip(&choice) {
            let d = f.demand;
            reserved[s][0] += d.cpu;
            reserved[s][1] += d.net;
            reserved[s][2] += d.ram;
        }
        let fits = reserved.iter().zip(servers).all(|(r, s)| {
            r[0] <= s.capacity.cpu && r[1] <= s.capacity.net && r[2] <= s.capacity.ram
        });
        if fits {
            let v = imbalance_of(servers, &reserved);
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
        let mut k = 0;
        while k < choice.len() {
            choice[k] += 1;
            if choice[k] < servers.len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == choice.len() {
            return best;
        }
    }
}

fn balancer_oracle() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xBA1A);
    let mut parts = Vec::new();
    let mut pass = true;
    for identical in [true, false] {
        let (mut feasible, mut over, mut worst) = (0usize, 0usize, 1.0f64);
        for _ in 0..4000 {
            let servers = random_servers(&mut rng, identical);
            let flows = random_flows(&mut rng);
            let Some(opt) = balance_optimum(&flows, &servers) else {
                continue;
            };
            feasible += 1;
            let plan = assign_flows(
                &flows,
                &servers,
                &vec![ResourceVector::ZERO; servers.len()],
                0,
            );
            let in_bound = plan.deferred.is_empty() && plan.imbalance_after <= 1.15 * opt + 1e-12;
            if !in_bound {
                over += 1;
            }
            if opt > 0.0 {
                worst = worst.max(plan.imbalance_after / opt);
            }
        }
        pass &= over == 0;
        parts.push(format!(
            "{} servers: {over} of {feasible} over 1.15x optimum (worst {worst:.3})",
            if identical {
                "identical"
            } else {
                "heterogeneous"
            }
        ));
    }
    let two = vec![
        ServerSpec {
            id: "a".into(),
            capacity: ResourceVector::new(10.0, 10.0, 10.0),
        },
        ServerSpec {
            id: "b".into(),
            capacity: ResourceVector::new(10.0, 10.0, 10.0),
        },
    ];
    let pair = |id: &str| FlowRequest {
        flow_id: id.into(),
        class: 0,
        priority: 0,
        demand: ResourceVector::new(2.0, 3.0, 1.0),
    };
    let sym =
        assign_flows(&[pair("x"), pair("y")], &two, &[ResourceVector::ZERO; 2], 0).imbalance_after;
    pass &= sym == 0.0;
    verdict(
        pass,
        format!(
            "{}; symmetric 2x2 imbalance {sym}; {:.1} s",
            parts.join("; "),
            secs(t0.elapsed())
        ),
    )
}

fn method_ordering(table: &CalibrationTable, runs: &mut Vec<RunOutput>) -> Verdict {
    let t0 = Instant::now();
    let cfg = ScenarioConfig::load(&scenario("reference.toml")).unwrap();
    let (report, results) = compare_methods(&cfg, table).unwrap();
    let el = t0.elapsed();
    let combined = report.rows.iter().find(|r| r.label == "combined").unwrap();
    let singles: Vec<_> = report
        .rows
        .iter()
        .filter(|r| r.methods.len() == 1)
        .collect();
    let loss = singles.iter().all(|r| combined.loss_pct < r.loss_pct);
    let jitter = singles.iter().all(|r| combined.jitter_ms < r.jitter_ms);
    let imbalance = singles.iter().all(|r| combined.imbalance < r.imbalance);
    let util = singles
        .iter()
        .all(|r| combined.utilization <= r.utilization);
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            format!(
                "{} {:.3}/{:.3}%/{:.3}/{:.3}",
                r.label, r.utilization, r.loss_pct, r.jitter_ms, r.imbalance
            )
        })
        .collect();
    runs.extend(results.into_iter().flat_map(|r| r.runs));
    verdict(
        loss && jitter && imbalance && util && cfg.seeds.len() == 5 && el < Duration::from_secs(600),
        format!(
            "combined below singles: loss {loss}, jitter {jitter}, imbalance {imbalance}, utilization {util} (util/loss/jitter ms/imbalance: {}); {:.1} s (< 600)",
            rows.join(", "),
            secs(el)
        ),
    )
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_fractal-qos");
    let invocations: [(&str, &str, &[&str]); 2] = [
        ("simulate", "single_node.toml", &[]),
        ("compare", "reference.toml", &["--seed", "2"]),
    ];
    let mut checked = 0;
    let mut differing = Vec::new();
    for (cmd, file, extra) in invocations {
        let trees: Vec<Vec<(PathBuf, Vec<u8>)>> = (0..2)
            .map(|i| {
                let out = tmp.path().join(format!("{cmd}-{i}"));
                let status = Command::new(bin)
                    .arg(cmd)
                    .arg(scenario(file))
                    .args(extra)
                    .arg("-o")
                    .arg(&out)
                    .stderr(std::process::Stdio::null())
                    .status()
                    .unwrap();
                assert!(status.success(), "{cmd} failed");
                read_tree(&out)
            })
            .collect();
        checked += trees[0].len();
        if trees[0] != trees[1] || trees[0].is_empty() {
            differing.push(cmd);
        }
    }
    verdict(
        differing.is_empty(),
        format!("simulate and compare each run twice: {checked} files per run compared byte for byte, differing: {differing:?}"),
    )
}

fn ledger_invariants(runs: &[RunOutput], slots: &[(usize, u64)]) -> Verdict {
    let mut violations = 0;
    let mut unbalanced = 0;
    let mut short = 0;
    let mut checked = 0;
    for (run, &(_, want)) in runs.iter().zip(slots) {
        violations += run.invariants.conservation_violations;
        unbalanced +=
            (!run.invariants.ledger_balanced || run.invariants.ledger_double_release) as usize;
        short += (run.invariants.slots_checked != want) as usize;
        checked += run.invariants.slots_checked;
        let nodes_ok = run.nodes.iter().all(|n| {
            let c = &n.totals;
            c.received == c.served + c.dropped + c.ejected + c.expired + n.queued
        });
        violations += (!nodes_ok) as u64;
    }
    verdict(
        violations == 0 && unbalanced == 0 && short == 0,
        format!(
            "{} runs, {checked} slot checks: {violations} conservation violations, {unbalanced} unbalanced ledgers, {short} runs with unchecked slots",
            runs.len()
        ),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let shipped = CalibrationTable::load(&scenario("table.csv")).unwrap();
    let mut runs = Vec::new();
    let mut lines: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |n: u32, name: &'static str, v: Verdict| {
        println!(
            "criterion {n:>2} {} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        lines.push((n, name, v));
    };
    record(1, "fGn Hurst recovery", fgn_recovery());
    record(2, "cascade h(q) spectrum", cascade_spectrum());
    record(3, "dh and sigma_var co-monotone", spread_tracks_variation());
    record(4, "link cost rule exactness", cost_rule());
    record(5, "routing vs enumeration oracle", routing_oracle());
    record(
        6,
        "calibration table properties",
        table_properties(&shipped),
    );
    let single_slots = ScenarioConfig::load(&scenario("single_node.toml"))
        .unwrap()
        .slots;
    record(
        7,
        "controller efficacy on one node",
        controller_efficacy(&shipped, &mut runs),
    );
    let n7 = runs.len();
    record(8, "balancer vs enumeration oracle", balancer_oracle());
    let reference_slots = ScenarioConfig::load(&scenario("reference.toml"))
        .unwrap()
        .slots;
    record(
        9,
        "method comparison orderings",
        method_ordering(&shipped, &mut runs),
    );
    record(10, "byte-identical reruns", determinism());
    let slots: Vec<(usize, u64)> = (0..runs.len())
        .map(|i| {
            (
                i,
                if i < n7 {
                    single_slots
                } else {
                    reference_slots
                },
            )
        })
        .collect();
    record(
        11,
        "conservation and ledger balance",
        ledger_invariants(&runs, &slots),
    );
    let failed: Vec<u32> = lines
        .iter()
        .filter(|(_, _, v)| !v.pass)
        .map(|(n, _, _)| *n)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", lines.len());
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
