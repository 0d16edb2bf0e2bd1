use std::collections::{BTreeSet, HashMap};

use gridtune::scalar::Dual;
use gridtune::symcore::{evaluate, expand_derivative, substitute_symbols, Bindings, Expr, Symbol};
use proptest::prelude::*;

fn vars() -> [Symbol; 3] {
    [Symbol::state("x"), Symbol::state("y"), Symbol::from_path("blk.z", gridtune::symcore::SymbolKind::State)]
}

/// Random expressions over three states. Transcendental arguments are
/// wrapped so every tree is defined and smooth on [-1, 1]^3.
fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0usize..3).prop_map(|i| Expr::var(vars()[i].clone())),
        (-2.0f64..2.0).prop_map(Expr::constant),
    ];
    leaf.prop_recursive(8, 64, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a / (1.0 + b.clone() * b)),
            inner.clone().prop_map(|a| -a),
            inner.clone().prop_map(|a| a.sin()),
            inner.clone().prop_map(|a| a.cos()),
            inner.clone().prop_map(|a| a.sin().exp()),
            inner.clone().prop_map(|a| (1.0 + a.clone() * a).log()),
            inner.clone().prop_map(|a| (1.0 + a.clone() * a).sqrt()),
            inner.clone().prop_map(|a| a.powi(2)),
        ]
    })
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0]
}

fn eval_at(e: &Expr, x: [f64; 3]) -> f64 {
    let b: Bindings<f64> = vars().into_iter().zip(x).collect();
    evaluate(e, &b).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dual_tangent_matches_central_difference(e in expr(), x in point(), dir in point()) {
        let b: Bindings<Dual<1>> =
            vars().into_iter().zip(x.iter().zip(dir)).map(|(s, (&v, d))| (s, Dual::new(v, [d]))).collect();
        let ad = evaluate(&e, &b).unwrap();
        let h = 1e-6;
        let shift = |s: f64| [x[0] + s * dir[0], x[1] + s * dir[1], x[2] + s * dir[2]];
        let fd = (eval_at(&e, shift(h)) - eval_at(&e, shift(-h))) / (2.0 * h);
        prop_assert!((ad.re - eval_at(&e, x)).abs() <= 1e-14 * ad.re.abs().max(1.0));
        prop_assert!(close(ad.eps[0], fd, 1e-6), "{} vs {fd} for {e}", ad.eps[0]);
    }

    #[test]
    fn expanded_time_derivative_follows_the_flow(e in expr(), f in expr(), g in expr(), x in point()) {
        let [sx, sy, sz] = vars();
        // the flow moves x by f, y by g and leaves z fixed
        let known: HashMap<Symbol, Expr> =
            [(sx, f.clone()), (sy, g.clone()), (sz, Expr::zero())].into_iter().collect();
        let d = expand_derivative(&e.dt(), &known).unwrap();
        let (vf, vg) = (eval_at(&f, x), eval_at(&g, x));
        let h = 1e-6;
        let along = |s: f64| eval_at(&e, [x[0] + s * vf, x[1] + s * vg, x[2]]);
        let fd = (along(h) - along(-h)) / (2.0 * h);
        prop_assert!(close(eval_at(&d, x), fd, 1e-6));
    }

    #[test]
    fn substitution_is_idempotent_without_key_reuse(e in expr(), c in -2.0f64..2.0) {
        let [sx, sy, sz] = vars();
        // values mention only z, which is not a key
        let map: HashMap<Symbol, Expr> =
            [(sx, Expr::var(sz.clone()) * c), (sy, Expr::var(sz).sin())].into_iter().collect();
        let once = substitute_symbols(&e, &map);
        prop_assert_eq!(substitute_symbols(&once, &map), once);
    }

    #[test]
    fn substitution_tracks_free_symbols(e in expr(), v in expr()) {
        let [sx, ..] = vars();
        let map: HashMap<Symbol, Expr> = [(sx.clone(), v.clone())].into_iter().collect();
        let out = substitute_symbols(&e, &map);
        let mut want: BTreeSet<Symbol> = e.free_symbols();
        if want.remove(&sx) {
            want.extend(v.free_symbols());
        }
        // simplification may cancel symbols but never invents them
        prop_assert!(out.free_symbols().is_subset(&want));
        let x = [0.3, -0.7, 0.5];
        let b: Bindings<f64> = vars().into_iter().zip(x).collect();
        let direct = {
            let mut bb = b.clone();
            bb.insert(sx, evaluate(&v, &b).unwrap());
            evaluate(&e, &bb).unwrap()
        };
        prop_assert!(close(evaluate(&out, &b).unwrap(), direct, 1e-12));
    }

    #[test]
    fn structural_equality_is_an_equivalence(a in expr(), b in expr()) {
        let a2 = a.clone();
        prop_assert_eq!(&a, &a2);
        prop_assert_eq!(a == b, b == a);
        if a == b {
            prop_assert_eq!(a.to_prefix(), b.to_prefix());
        }
    }
}
