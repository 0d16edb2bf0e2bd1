use std::collections::HashMap;

use super::{sign, Expr, Func, Node, SymError, Symbol};
use crate::scalar::Scalar;

pub type Bindings<S> = HashMap<Symbol, S>;

/// Numeric value of `expr` with every free symbol bound.
pub fn evaluate<S: Scalar>(expr: &Expr, bindings: &Bindings<S>) -> Result<S, SymError> {
    Ok(match expr.node() {
        Node::Const(v) => S::from_f64(*v),
        Node::Var(s) => *bindings.get(s).ok_or_else(|| SymError::UnboundSymbol(s.path()))?,
        Node::Add(xs) => {
            let mut acc = evaluate(&xs[0], bindings)?;
            for x in &xs[1..] {
                acc += evaluate(x, bindings)?;
            }
            acc
        }
        Node::Mul(xs) => {
            let mut acc = evaluate(&xs[0], bindings)?;
            for x in &xs[1..] {
                acc *= evaluate(x, bindings)?;
            }
            acc
        }
        Node::Pow(b, e) => {
            let base = evaluate(b, bindings)?;
            match e.as_const() {
                Some(k) => pow_const(base, k)?,
                None => pow_general(base, evaluate(e, bindings)?)?,
            }
        }
        Node::Neg(a) => -evaluate(a, bindings)?,
        Node::Call(f, a) => apply_func(*f, evaluate(a, bindings)?)?,
        Node::Dt(_) => return Err(SymError::ContainsDerivative(expr.to_prefix())),
    })
}

pub(crate) fn pow_const<S: Scalar>(base: S, k: f64) -> Result<S, SymError> {
    if k.fract() == 0.0 && k.abs() <= i32::MAX as f64 {
        if k < 0.0 && base.value() == 0.0 {
            return Err(SymError::DomainError("division by zero".into()));
        }
        Ok(base.powi(k as i32))
    } else {
        pow_general(base, S::from_f64(k))
    }
}

pub(crate) fn pow_general<S: Scalar>(base: S, e: S) -> Result<S, SymError> {
    let b = base.value();
    if b < 0.0 || (b == 0.0 && e.value() <= 0.0) {
        return Err(SymError::DomainError(format!("{b}^{}", e.value())));
    }
    Ok(base.powf(e))
}

pub(crate) fn apply_func<S: Scalar>(f: Func, x: S) -> Result<S, SymError> {
    Ok(match f {
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Exp => x.exp(),
        Func::Log => {
            if x.value() <= 0.0 {
                return Err(SymError::DomainError(format!("log({})", x.value())));
            }
            x.ln()
        }
        Func::Sqrt => {
            if x.value() < 0.0 {
                return Err(SymError::DomainError(format!("sqrt({})", x.value())));
            }
            x.sqrt()
        }
        Func::Abs => x.abs(),
        Func::Sign => S::from_f64(sign(x.value())),
    })
}
