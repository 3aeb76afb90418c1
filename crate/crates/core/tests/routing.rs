use proptest::prelude::*;

use fractal_qos::routing::{
    check_conservation, route_flows, route_flows_sticky, unrouted_penalty, update_cost, Demand,
    Path, Topology,
};

#[derive(Debug, Clone)]
struct Instance {
    nodes: usize,
    links: Vec<(usize, usize, f64, f64)>,
    demands: Vec<(usize, usize, f64)>,
}

fn instance() -> impl Strategy<Value = Instance> {
    (3usize..6).prop_flat_map(|n| {
        let link = (0..n, 0..n, 1u32..10, 2u32..20)
            .prop_filter("no self-loops", |(a, b, _, _)| a != b)
            .prop_map(|(a, b, c, cap)| (a, b, c as f64, cap as f64));
        let demand = (0..n, 0..n, 1u32..8)
            .prop_filter("distinct ends", |(a, b, _)| a != b)
            .prop_map(|(a, b, bw)| (a, b, bw as f64));
        (
            Just(n),
            prop::collection::vec(link, 2..8),
            prop::collection::vec(demand, 1..5),
        )
            .prop_map(|(nodes, links, demands)| Instance {
                nodes,
                links,
                demands,
            })
    })
}

fn build(inst: &Instance, cost_scale: f64) -> (Topology, Vec<Demand>) {
    let mut t = Topology::new((0..inst.nodes).map(|i| format!("n{i}")).collect());
    for (i, &(a, b, c, cap)) in inst.links.iter().enumerate() {
        t.add_link(
            &format!("l{i}"),
            &format!("n{a}"),
            &format!("n{b}"),
            c * cost_scale,
            cap,
        )
        .unwrap();
    }
    let demands = inst
        .demands
        .iter()
        .enumerate()
        .map(|(i, &(s, d, bw))| Demand {
            flow_id: format!("f{i}"),
            class: 0,
            priority: (i % 2) as u32,
            src: s,
            dst: d,
            bandwidth: bw,
            splittable: false,
        })
        .collect();
    (t, demands)
}

fn paths(o: &fractal_qos::routing::RoutingOutcome) -> Vec<Vec<Path>> {
    o.demands
        .iter()
        .map(|d| d.shares.iter().map(|s| s.path.clone()).collect())
        .collect()
}

proptest! {
    #[test]
    fn cost_stays_between_base_and_base_plus_premium(
        c in 0.1f64..100.0, h in 0.0f64..1.0, s in 0.0f64..5.0, c0 in 0.0f64..10.0
    ) {
        let v = update_cost(c, h, s, c0).unwrap();
        prop_assert!(v >= c - 1e-12 && v <= c + c0 + 1e-12);
    }

    #[test]
    fn cost_does_not_fall_as_persistence_rises(
        c in 0.1f64..100.0, h1 in 0.0f64..1.0, h2 in 0.0f64..1.0, s in 0.0f64..5.0
    ) {
        let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
        prop_assert!(update_cost(c, lo, s, 2.0).unwrap() <= update_cost(c, hi, s, 2.0).unwrap() + 1e-12);
    }

    #[test]
    fn routing_conserves_bandwidth(inst in instance()) {
        let (mut t, d) = build(&inst, 1.0);
        let o = route_flows(&mut t, &d).unwrap();
        prop_assert!(check_conservation(&t, &d, &o));
        for l in &t.links {
            prop_assert!(l.allocated <= l.capacity + 1e-9);
        }
    }

    #[test]
    fn scaling_costs_by_a_power_of_two_scales_the_objective(inst in instance(), k in 1i32..4) {
        let scale = 2f64.powi(k);
        let (mut a, d) = build(&inst, 1.0);
        let (mut b, _) = build(&inst, scale);
        let oa = route_flows(&mut a, &d).unwrap();
        let ob = route_flows(&mut b, &d).unwrap();
        prop_assert_eq!(paths(&oa), paths(&ob));
        prop_assert_eq!(oa.objective * scale, ob.objective);
    }

    #[test]
    fn sticky_routing_keeps_feasible_incumbents_under_a_large_margin(inst in instance()) {
        let (t, d) = build(&inst, 1.0);
        let mut first = t.clone();
        let o = route_flows(&mut first, &d).unwrap();
        let incumbent: Vec<Option<Path>> = o.demands.iter().map(|r| r.shares.first().map(|s| s.path.clone())).collect();
        let mut again = t.clone();
        let kept = route_flows_sticky(&mut again, &d, &incumbent, 1e9).unwrap();
        for (inc, r) in incumbent.iter().zip(&kept.demands) {
            if let Some(p) = inc {
                prop_assert_eq!(&r.shares[0].path, p);
            }
        }
        prop_assert!(check_conservation(&again, &d, &kept));
    }

    #[test]
    fn sticky_routing_with_no_margin_is_never_worse_than_fresh(inst in instance()) {
        let (t, d) = build(&inst, 1.0);
        let mut fresh_topo = t.clone();
        let fresh = route_flows(&mut fresh_topo, &d).unwrap();
        let p = unrouted_penalty(&t);
        let stale: Vec<Option<Path>> = vec![None; d.len()];
        let mut s = t.clone();
        let sticky = route_flows_sticky(&mut s, &d, &stale, 0.0).unwrap();
        prop_assert!(sticky.penalized(p) <= fresh.penalized(p) + 1e-9);
    }
}

#[test]
fn rejects_bad_inputs() {
    assert!(update_cost(-1.0, 0.7, 1.0, 2.0).is_err());
    let mut t = Topology::new(vec!["a".into(), "b".into()]);
    assert!(t.add_link("x", "a", "a", 1.0, 1.0).is_err());
    assert!(t.add_link("x", "a", "c", 1.0, 1.0).is_err());
    assert!(t.add_link("x", "a", "b", 0.0, 1.0).is_err());
    t.add_link("x", "a", "b", 1.0, 1.0).unwrap();
    assert!(route_flows_sticky(&mut t, &[], &[None], 0.1).is_err());
}
