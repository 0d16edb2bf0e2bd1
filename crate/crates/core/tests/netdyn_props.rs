use gridtune::blocksys::Scratch;
use gridtune::odesolve::{OdeSystem, Time};
use gridtune::powerlib::{five_bus, NetworkDescription};
use proptest::prelude::*;

fn mixed_five_bus() -> NetworkDescription {
    let mut d = five_bus("swing", &[0.5, 1.0, 1.5, 2.0, 2.5], &[]);
    // two buses carry a PID loop so node dimensions differ
    for k in [1, 3] {
        d.node[k].model = "swing+pid".into();
        d.node[k].params.insert("ki".into(), 0.5);
    }
    d
}

fn rhs(net: &gridtune::netdyn::NetworkSystem, x: &[f64], t: f64) -> Vec<f64> {
    let p = net.default_params().unwrap();
    let mut f = vec![0.0; net.dim()];
    net.rhs(x, &p, Time::at(t), &mut f, &mut Scratch::new()).unwrap();
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn edge_order_does_not_change_a_single_bit(
        order in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        x in proptest::collection::vec(-1.0f64..1.0, 12),
        t in 0.0f64..5.0,
    ) {
        let base = mixed_five_bus();
        let mut shuffled = base.clone();
        shuffled.edge = order.iter().map(|&k| base.edge[k].clone()).collect();
        let (a, b) = (base.build().unwrap(), shuffled.build().unwrap());
        prop_assert_eq!(a.dim(), 12);
        let (fa, fb) = (rhs(&a, &x, t), rhs(&b, &x, t));
        for (u, v) in fa.iter().zip(&fb) {
            prop_assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn relabeling_permutes_layout_and_dynamics(
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        x in proptest::collection::vec(-1.0f64..1.0, 12),
    ) {
        // node k of `base` becomes node perm[k] of `relabeled`
        let base = mixed_five_bus();
        let mut relabeled = base.clone();
        for (k, &to) in perm.iter().enumerate() {
            relabeled.node[to] = base.node[k].clone();
        }
        for e in &mut relabeled.edge {
            e.src = perm[e.src - 1] + 1;
            e.dst = perm[e.dst - 1] + 1;
        }
        let (a, b) = (base.build().unwrap(), relabeled.build().unwrap());
        prop_assert_eq!(a.dim(), b.dim());
        let mut xb = vec![0.0; b.dim()];
        let mut map = Vec::new();
        for k in 0..5 {
            let (ra, rb) = (a.state_range(k + 1).unwrap(), b.state_range(perm[k] + 1).unwrap());
            prop_assert_eq!(ra.len(), rb.len());
            prop_assert_eq!(&a.mass()[ra.clone()], &b.mass()[rb.clone()]);
            for (i, j) in ra.zip(rb) {
                xb[j] = x[i];
                map.push((i, j));
            }
        }
        let (fa, fb) = (rhs(&a, &x, 0.0), rhs(&b, &xb, 0.0));
        for (i, j) in map {
            prop_assert!((fa[i] - fb[j]).abs() <= 1e-12 * fa[i].abs().max(1.0));
        }
    }
}
