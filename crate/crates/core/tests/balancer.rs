use proptest::prelude::*;

use fractal_qos::balancer::{assign_flows, system_imbalance, FlowRequest, NodeLoad, ServerSpec};
use fractal_qos::queue::ResourceVector;

fn rv() -> impl Strategy<Value = ResourceVector> {
    (0.5f64..10.0, 0.5f64..10.0, 0.5f64..10.0).prop_map(|(c, n, r)| ResourceVector::new(c, n, r))
}

fn case() -> impl Strategy<Value = (Vec<FlowRequest>, Vec<ServerSpec>)> {
    let flows = prop::collection::vec((rv(), 0u32..3), 1..8).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (demand, p))| FlowRequest {
                flow_id: format!("f{i}"),
                class: p,
                priority: p,
                demand,
            })
            .collect::<Vec<_>>()
    });
    let servers =
        prop::collection::vec((8.0f64..30.0, 8.0f64..30.0, 8.0f64..30.0), 2..4).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (c, n, r))| ServerSpec {
                    id: format!("s{i}"),
                    capacity: ResourceVector::new(c, n, r),
                })
                .collect::<Vec<_>>()
        });
    (flows, servers)
}

proptest! {
    #[test]
    fn plans_are_feasible_and_cover_every_flow((flows, servers) in case()) {
        let bg = vec![ResourceVector::ZERO; servers.len()];
        let plan = assign_flows(&flows, &servers, &bg, 3);
        let mut used = vec![ResourceVector::ZERO; servers.len()];
        for a in &plan.assignments {
            used[a.server] = used[a.server].add(a.reserved);
            prop_assert_eq!(a.window_index, 3);
        }
        for (u, s) in used.iter().zip(&servers) {
            prop_assert!(u.cpu <= s.capacity.cpu + 1e-9);
            prop_assert!(u.net <= s.capacity.net + 1e-9);
            prop_assert!(u.ram <= s.capacity.ram + 1e-9);
        }
        let mut ids: Vec<&str> = plan.assignments.iter().map(|a| a.flow_id.as_str())
            .chain(plan.deferred.iter().map(|s| s.as_str())).collect();
        ids.sort_unstable();
        let mut want: Vec<&str> = flows.iter().map(|f| f.flow_id.as_str()).collect();
        want.sort_unstable();
        prop_assert_eq!(ids, want);
    }

    #[test]
    fn imbalance_ignores_server_order(
        loads in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..6),
        rot in 0usize..6
    ) {
        let mk = |v: &[(f64, f64, f64)]| v.iter().enumerate()
            .map(|(i, &(c, r, n))| NodeLoad::new(format!("s{i}"), c, r, n)).collect::<Vec<_>>();
        let mut turned = loads.clone();
        let k = rot % turned.len();
        turned.rotate_left(k);
        let a = system_imbalance(&mk(&loads), 0).system_imbalance;
        let b = system_imbalance(&mk(&turned), 0).system_imbalance;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn equal_loads_are_balanced(u in 0.0f64..1.0, n in 1usize..6) {
        let loads: Vec<NodeLoad> = (0..n).map(|i| NodeLoad::new(format!("s{i}"), u, u, u)).collect();
        prop_assert!(system_imbalance(&loads, 0).system_imbalance.abs() < 1e-12);
    }
}

#[test]
fn flows_that_fit_nowhere_are_deferred() {
    let servers = vec![ServerSpec {
        id: "s".into(),
        capacity: ResourceVector::new(5.0, 5.0, 5.0),
    }];
    let flows = vec![
        FlowRequest {
            flow_id: "big".into(),
            class: 0,
            priority: 0,
            demand: ResourceVector::new(9.0, 1.0, 1.0),
        },
        FlowRequest {
            flow_id: "ok".into(),
            class: 0,
            priority: 0,
            demand: ResourceVector::new(1.0, 1.0, 1.0),
        },
    ];
    let plan = assign_flows(&flows, &servers, &[ResourceVector::ZERO], 0);
    assert_eq!(plan.deferred, vec!["big".to_string()]);
    assert_eq!(plan.assignments.len(), 1);
}
