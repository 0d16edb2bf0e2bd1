use std::collections::HashMap;

use super::{Expr, Func, Node, SymError, Symbol, SymbolKind};

/// Symbolic derivative of `expr` where `rule` gives the derivative of each
/// symbol. Chain, product and power rules are applied structurally. `Dt`
/// nodes must have been expanded beforehand.
pub fn derivative(
    expr: &Expr,
    rule: &mut dyn FnMut(&Symbol) -> Result<Expr, SymError>,
) -> Result<Expr, SymError> {
    Ok(match expr.node() {
        Node::Const(_) => Expr::zero(),
        Node::Var(s) => rule(s)?,
        Node::Add(xs) => {
            let mut terms = Vec::with_capacity(xs.len());
            for x in xs {
                terms.push(derivative(x, rule)?);
            }
            Expr::add_all(terms)
        }
        Node::Mul(xs) => {
            let mut terms = Vec::with_capacity(xs.len());
            for i in 0..xs.len() {
                let di = derivative(&xs[i], rule)?;
                if di.is_zero() {
                    continue;
                }
                let factors = xs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| if i == j { di.clone() } else { x.clone() });
                terms.push(Expr::mul_all(factors));
            }
            Expr::add_all(terms)
        }
        Node::Pow(b, e) => {
            let db = derivative(b, rule)?;
            match e.as_const() {
                Some(c) => Expr::mul_all([Expr::constant(c), b.pow(&Expr::constant(c - 1.0)), db]),
                None => {
                    let de = derivative(e, rule)?;
                    // d(b^e) = b^e (e' ln b + e b'/b)
                    let inner = Expr::add_all([
                        Expr::mul_all([de, b.log()]),
                        Expr::mul_all([e.clone(), db, b.recip()]),
                    ]);
                    Expr::mul_all([expr.clone(), inner])
                }
            }
        }
        Node::Neg(a) => derivative(a, rule)?.neg(),
        Node::Call(f, a) => {
            let da = derivative(a, rule)?;
            if da.is_zero() {
                return Ok(Expr::zero());
            }
            let outer = match f {
                Func::Sin => a.cos(),
                Func::Cos => a.sin().neg(),
                Func::Exp => expr.clone(),
                Func::Log => a.recip(),
                Func::Sqrt => Expr::mul_all([Expr::constant(0.5), expr.recip()]),
                Func::Abs => Expr::call(Func::Sign, a),
                Func::Sign => Expr::zero(),
            };
            Expr::mul_all([outer, da])
        }
        Node::Dt(_) => return Err(SymError::ContainsDerivative(expr.to_prefix())),
    })
}

/// Partial derivative with respect to a single symbol.
pub fn partial(expr: &Expr, wrt: &Symbol) -> Result<Expr, SymError> {
    derivative(expr, &mut |s| Ok(if s == wrt { Expr::one() } else { Expr::zero() }))
}

/// Rewrites every `Dt(u)` node into an explicit expression.
///
/// `known` gives `dx/dt` for state symbols. Parameters and constants have
/// zero derivative and `dt/dt = 1`. Any other symbol under `Dt` is an error.
pub fn expand_derivative(expr: &Expr, known: &HashMap<Symbol, Expr>) -> Result<Expr, SymError> {
    expr.map_bottom_up(&mut |e| match e.node() {
        Node::Dt(inner) => derivative(inner, &mut |s| match known.get(s) {
            Some(d) => Ok(d.clone()),
            None => match s.kind() {
                SymbolKind::Parameter => Ok(Expr::zero()),
                SymbolKind::Time => Ok(Expr::one()),
                _ => Err(SymError::UnresolvableDerivative(s.path())),
            },
        }),
        _ => Ok(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Dual;
    use crate::symcore::{evaluate, Bindings};

    #[test]
    fn known_differential_is_substituted() {
        let w = Symbol::state("omega");
        let rhs = (Expr::var(Symbol::input("P_m"))
            - Expr::var(Symbol::param("D")) * Expr::var(w.clone())
            - Expr::var(Symbol::input("P_e")))
            / Expr::var(Symbol::param("M"));
        let known = HashMap::from([(w.clone(), rhs.clone())]);
        let got = expand_derivative(&Expr::var(w).dt(), &known).unwrap();
        assert_eq!(got, rhs);
    }

    #[test]
    fn parameter_derivative_vanishes() {
        let c = Expr::var(Symbol::param("c"));
        assert!(expand_derivative(&c.dt(), &HashMap::new()).unwrap().is_zero());
    }

    #[test]
    fn unresolvable_open_input() {
        let u = Expr::var(Symbol::input("u"));
        let err = expand_derivative(&u.dt(), &HashMap::new()).unwrap_err();
        assert_eq!(err, SymError::UnresolvableDerivative("u".into()));
    }

    #[test]
    fn square_chain_rule_matches_duals() {
        let w = Symbol::state("omega");
        let a = Symbol::state("a");
        let e = Expr::var(w.clone()).powi(2).dt();
        let known = HashMap::from([(w.clone(), Expr::var(a.clone()))]);
        let got = expand_derivative(&e, &known).unwrap();
        // oracle: evaluate omega^2 with a dual omega whose tangent is a
        let mut b = Bindings::new();
        b.insert(w.clone(), Dual::<1>::new(0.3, [1.7]));
        let dual: Dual<1> = evaluate(&Expr::var(w.clone()).powi(2), &b).unwrap();
        let mut b = Bindings::new();
        b.insert(w, 0.3);
        b.insert(a, 1.7);
        let sym: f64 = evaluate(&got, &b).unwrap();
        assert!((sym - dual.eps[0]).abs() < 1e-15);
        assert!((sym - 2.0 * 0.3 * 1.7).abs() < 1e-15);
    }

    #[test]
    fn time_derivative_of_time_is_one() {
        let t = Expr::var(Symbol::time());
        let e = (t.clone() * 2.0).dt();
        assert_eq!(expand_derivative(&e, &HashMap::new()).unwrap().as_const(), Some(2.0));
    }
}
