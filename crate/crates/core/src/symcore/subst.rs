use std::collections::HashMap;
use std::sync::Arc;

use super::{Expr, Symbol};

/// Replaces every maximal subtree equal to a key of `mapping` by its value.
///
/// Replacement is single-pass: substituted values are not scanned again, so
/// callers that need a fixpoint must iterate.
pub fn substitute(expr: &Expr, mapping: &HashMap<Expr, Expr>) -> Expr {
    if mapping.is_empty() {
        return expr.clone();
    }
    subst_rec(expr, &|e| mapping.get(e).cloned())
}

/// [`substitute`] keyed by symbols.
pub fn substitute_symbols(expr: &Expr, mapping: &HashMap<Symbol, Expr>) -> Expr {
    if mapping.is_empty() {
        return expr.clone();
    }
    subst_rec(expr, &|e| e.as_var().and_then(|s| mapping.get(s).cloned()))
}

fn subst_rec(expr: &Expr, lookup: &dyn Fn(&Expr) -> Option<Expr>) -> Expr {
    if let Some(r) = lookup(expr) {
        return r;
    }
    let kids = expr.children();
    if kids.is_empty() {
        return expr.clone();
    }
    let mut changed = false;
    let new_kids: Vec<Expr> = kids
        .into_iter()
        .map(|k| {
            let n = subst_rec(k, lookup);
            changed |= !Arc::ptr_eq(&n.0, &k.0);
            n
        })
        .collect();
    if changed {
        expr.rebuild(new_kids)
    } else {
        expr.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::{evaluate, Bindings};

    #[test]
    fn input_replaced_by_controller_output() {
        let pm = Symbol::input("P_m");
        let pe = Expr::var(Symbol::input("P_e"));
        let d = Expr::var(Symbol::param("D"));
        let w = Expr::var(Symbol::state("omega"));
        let pid = Expr::var(Symbol::state("pid"));
        let e = Expr::var(pm.clone()) - d.clone() * w.clone() - pe.clone();
        let m = HashMap::from([(pm, 1.0 - pid.clone())]);
        let got = substitute_symbols(&e, &m);
        let want = (1.0 - pid) - d * w - pe;
        assert_eq!(got, want);
    }

    #[test]
    fn empty_mapping_is_identity() {
        let e = Expr::var(Symbol::state("x")) + Expr::var(Symbol::state("y"));
        assert_eq!(substitute(&e, &HashMap::new()), e);
    }

    #[test]
    fn parameter_then_evaluate() {
        let a = Symbol::param("a");
        let t = Symbol::time();
        let e = (Expr::var(a.clone()) * Expr::var(t.clone())).sin();
        let e = substitute_symbols(&e, &HashMap::from([(a, Expr::constant(2.0))]));
        let mut b = Bindings::new();
        b.insert(t, std::f64::consts::FRAC_PI_4);
        let v: f64 = evaluate(&e, &b).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_pass() {
        let x = Symbol::state("x");
        let y = Symbol::state("y");
        let e = Expr::var(x.clone());
        let m = HashMap::from([(x, Expr::var(y.clone())), (y.clone(), Expr::constant(1.0))]);
        assert_eq!(substitute_symbols(&e, &m), Expr::var(y));
    }

    #[test]
    fn subtree_keys_match_structurally() {
        let x = Expr::var(Symbol::state("x"));
        let y = Expr::var(Symbol::state("y"));
        let key = x.clone() * y.clone();
        let e = (x.clone() * y.clone()).sin() + x.clone();
        let m = HashMap::from([(key, Expr::var(Symbol::state("z")))]);
        let got = substitute(&e, &m);
        assert_eq!(got, Expr::var(Symbol::state("z")).sin() + x);
    }
}
