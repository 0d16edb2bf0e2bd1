//! Immutable symbolic expressions.
//!
//! Expressions are reference-counted trees compared by value. All smart
//! constructors ([`Expr::add`], [`Expr::mul`], ...) apply a deliberately small
//! set of simplifications: constant folding, elimination of additive zeros
//! and multiplicative ones, and flattening of nested sums and products.
//! Division is `a * b^-1` and subtraction is `a + (-b)`.

mod derive;
mod eval;
mod subst;
mod text;

use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

pub use derive::{derivative, expand_derivative, partial};
pub use eval::{evaluate, Bindings};
pub(crate) use eval::{apply_func, pow_const, pow_general};
pub use subst::{substitute, substitute_symbols};
pub use text::{parse_expr, ParseError};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymbolKind {
    State,
    Input,
    Parameter,
    Time,
}

/// A named, possibly namespaced variable.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol {
    namespace: Vec<String>,
    name: String,
    kind: SymbolKind,
}

impl Symbol {
    pub fn new(name: impl Into<String>, kind: SymbolKind) -> Self {
        Symbol { namespace: Vec::new(), name: name.into(), kind }
    }

    pub fn state(name: impl Into<String>) -> Self {
        Symbol::new(name, SymbolKind::State)
    }

    pub fn input(name: impl Into<String>) -> Self {
        Symbol::new(name, SymbolKind::Input)
    }

    pub fn param(name: impl Into<String>) -> Self {
        Symbol::new(name, SymbolKind::Parameter)
    }

    /// The independent variable `t`.
    pub fn time() -> Self {
        Symbol::new("t", SymbolKind::Time)
    }

    /// Builds a symbol from a dotted path such as `swing.omega`.
    pub fn from_path(path: &str, kind: SymbolKind) -> Self {
        let mut parts: Vec<String> = path.split('.').map(str::to_owned).collect();
        let name = parts.pop().unwrap_or_default();
        Symbol { namespace: parts, name, kind }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn namespace(&self) -> &[String] {
        &self.namespace
    }

    pub fn kind(&self) -> &SymbolKind {
        &self.kind
    }

    /// Dotted path, `ns1.ns2.name`.
    pub fn path(&self) -> String {
        let mut s = String::new();
        for ns in &self.namespace {
            s.push_str(ns);
            s.push('.');
        }
        s.push_str(&self.name);
        s
    }

    /// Same identity under an outer namespace.
    pub fn prefixed(&self, ns: &str) -> Self {
        let mut namespace = Vec::with_capacity(self.namespace.len() + 1);
        namespace.push(ns.to_owned());
        namespace.extend(self.namespace.iter().cloned());
        Symbol { namespace, name: self.name.clone(), kind: self.kind.clone() }
    }

    /// Drops the namespace entirely.
    pub fn unqualified(&self) -> Self {
        Symbol { namespace: Vec::new(), name: self.name.clone(), kind: self.kind.clone() }
    }

    /// Same path, different kind. Used when a connected input is replaced by
    /// the state that drives it.
    pub fn with_kind(&self, kind: SymbolKind) -> Self {
        Symbol { namespace: self.namespace.clone(), name: self.name.clone(), kind }
    }

    pub fn is_state(&self) -> bool {
        self.kind == SymbolKind::State
    }

    pub fn is_input(&self) -> bool {
        self.kind == SymbolKind::Input
    }

    pub fn is_param(&self) -> bool {
        self.kind == SymbolKind::Parameter
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.path())
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.path())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    /// Sign function; only produced by differentiating `abs`.
    Sign,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    /// Plain-number application, `None` outside the domain.
    pub fn apply(self, x: f64) -> Option<f64> {
        match self {
            Func::Sin => Some(x.sin()),
            Func::Cos => Some(x.cos()),
            Func::Exp => Some(x.exp()),
            Func::Log => (x > 0.0).then(|| x.ln()),
            Func::Sqrt => (x >= 0.0).then(|| x.sqrt()),
            Func::Abs => Some(x.abs()),
            Func::Sign => Some(sign(x)),
        }
    }
}

pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub enum Node {
    Const(f64),
    Var(Symbol),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Pow(Expr, Expr),
    Neg(Expr),
    Call(Func, Expr),
    /// Time derivative of the wrapped expression.
    Dt(Expr),
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Node::Const(a), Node::Const(b)) => a.to_bits() == b.to_bits(),
            (Node::Var(a), Node::Var(b)) => a == b,
            (Node::Add(a), Node::Add(b)) | (Node::Mul(a), Node::Mul(b)) => a == b,
            (Node::Pow(a, b), Node::Pow(c, d)) => a == c && b == d,
            (Node::Neg(a), Node::Neg(b)) | (Node::Dt(a), Node::Dt(b)) => a == b,
            (Node::Call(f, a), Node::Call(g, b)) => f == g && a == b,
            _ => false,
        }
    }
}

impl Eq for Node {}

impl Hash for Node {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Node::Const(v) => v.to_bits().hash(state),
            Node::Var(s) => s.hash(state),
            Node::Add(xs) | Node::Mul(xs) => xs.hash(state),
            Node::Pow(a, b) => {
                a.hash(state);
                b.hash(state);
            }
            Node::Neg(a) | Node::Dt(a) => a.hash(state),
            Node::Call(f, a) => {
                f.hash(state);
                a.hash(state);
            }
        }
    }
}

/// Shared, immutable expression tree.
#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || *self.0 == *other.0
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.hash(state)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_prefix())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_prefix())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymError {
    #[error("unresolvable derivative of `{0}`")]
    UnresolvableDerivative(String),
    #[error("unbound symbol `{0}`")]
    UnboundSymbol(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("expression still contains a time derivative: {0}")]
    ContainsDerivative(String),
}

impl Expr {
    /// Wraps a node verbatim, without simplification.
    pub fn from_node(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(v: f64) -> Self {
        Expr::from_node(Node::Const(v))
    }

    pub fn zero() -> Self {
        Expr::constant(0.0)
    }

    pub fn one() -> Self {
        Expr::constant(1.0)
    }

    pub fn var(sym: Symbol) -> Self {
        Expr::from_node(Node::Var(sym))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&Symbol> {
        match &*self.0 {
            Node::Var(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Sum with flattening and constant folding.
    pub fn add_all<I: IntoIterator<Item = Expr>>(terms: I) -> Self {
        let mut out = Vec::new();
        let mut c = 0.0;
        let mut saw_const = false;
        for t in terms {
            match t.node() {
                Node::Add(inner) => {
                    for u in inner {
                        match u.as_const() {
                            Some(v) => {
                                c += v;
                                saw_const = true;
                            }
                            None => out.push(u.clone()),
                        }
                    }
                }
                Node::Const(v) => {
                    c += v;
                    saw_const = true;
                }
                _ => out.push(t),
            }
        }
        if saw_const && (c != 0.0 || out.is_empty()) {
            out.push(Expr::constant(c));
        }
        match out.len() {
            0 => Expr::zero(),
            1 => out.pop().unwrap(),
            _ => Expr::from_node(Node::Add(out)),
        }
    }

    /// Product with flattening and constant folding. The folded constant
    /// comes first.
    pub fn mul_all<I: IntoIterator<Item = Expr>>(factors: I) -> Self {
        let mut out = Vec::new();
        let mut c = 1.0;
        for f in factors {
            match f.node() {
                Node::Mul(inner) => {
                    for u in inner {
                        match u.as_const() {
                            Some(v) => c *= v,
                            None => out.push(u.clone()),
                        }
                    }
                }
                Node::Const(v) => c *= v,
                _ => out.push(f),
            }
        }
        if c == 0.0 {
            return Expr::zero();
        }
        if out.is_empty() {
            return Expr::constant(c);
        }
        if c != 1.0 {
            out.insert(0, Expr::constant(c));
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Expr::from_node(Node::Mul(out))
        }
    }

    pub fn neg(&self) -> Self {
        match self.node() {
            Node::Const(v) => Expr::constant(-v),
            Node::Neg(inner) => inner.clone(),
            _ => Expr::from_node(Node::Neg(self.clone())),
        }
    }

    pub fn pow(&self, exponent: &Expr) -> Self {
        match (self.as_const(), exponent.as_const()) {
            (_, Some(e)) if e == 0.0 => Expr::one(),
            (_, Some(e)) if e == 1.0 => self.clone(),
            (Some(b), _) if b == 1.0 => Expr::one(),
            (Some(b), Some(e)) => {
                let v = b.powf(e);
                if v.is_finite() {
                    Expr::constant(v)
                } else {
                    Expr::from_node(Node::Pow(self.clone(), exponent.clone()))
                }
            }
            _ => Expr::from_node(Node::Pow(self.clone(), exponent.clone())),
        }
    }

    pub fn powi(&self, n: i32) -> Self {
        self.pow(&Expr::constant(n as f64))
    }

    pub fn recip(&self) -> Self {
        self.powi(-1)
    }

    pub fn call(f: Func, arg: &Expr) -> Self {
        if let Some(v) = arg.as_const() {
            if let Some(r) = f.apply(v) {
                if r.is_finite() {
                    return Expr::constant(r);
                }
            }
        }
        Expr::from_node(Node::Call(f, arg.clone()))
    }

    pub fn sin(&self) -> Self {
        Expr::call(Func::Sin, self)
    }
    pub fn cos(&self) -> Self {
        Expr::call(Func::Cos, self)
    }
    pub fn exp(&self) -> Self {
        Expr::call(Func::Exp, self)
    }
    pub fn log(&self) -> Self {
        Expr::call(Func::Log, self)
    }
    pub fn sqrt(&self) -> Self {
        Expr::call(Func::Sqrt, self)
    }
    pub fn abs(&self) -> Self {
        Expr::call(Func::Abs, self)
    }

    /// `d/dt` of this expression, left unexpanded.
    pub fn dt(&self) -> Self {
        if self.as_const().is_some() {
            return Expr::zero();
        }
        Expr::from_node(Node::Dt(self.clone()))
    }

    pub fn contains_dt(&self) -> bool {
        match self.node() {
            Node::Dt(_) => true,
            Node::Const(_) | Node::Var(_) => false,
            Node::Add(xs) | Node::Mul(xs) => xs.iter().any(Expr::contains_dt),
            Node::Pow(a, b) => a.contains_dt() || b.contains_dt(),
            Node::Neg(a) | Node::Call(_, a) => a.contains_dt(),
        }
    }

    /// Exactly the symbols occurring in `Var` nodes.
    pub fn free_symbols(&self) -> BTreeSet<Symbol> {
        let mut set = BTreeSet::new();
        self.collect_symbols(&mut set);
        set
    }

    fn collect_symbols(&self, set: &mut BTreeSet<Symbol>) {
        match self.node() {
            Node::Const(_) => {}
            Node::Var(s) => {
                if !set.contains(s) {
                    set.insert(s.clone());
                }
            }
            Node::Add(xs) | Node::Mul(xs) => xs.iter().for_each(|x| x.collect_symbols(set)),
            Node::Pow(a, b) => {
                a.collect_symbols(set);
                b.collect_symbols(set);
            }
            Node::Neg(a) | Node::Call(_, a) | Node::Dt(a) => a.collect_symbols(set),
        }
    }

    pub fn depends_on(&self, sym: &Symbol) -> bool {
        match self.node() {
            Node::Const(_) => false,
            Node::Var(s) => s == sym,
            Node::Add(xs) | Node::Mul(xs) => xs.iter().any(|x| x.depends_on(sym)),
            Node::Pow(a, b) => a.depends_on(sym) || b.depends_on(sym),
            Node::Neg(a) | Node::Call(_, a) | Node::Dt(a) => a.depends_on(sym),
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        1 + match self.node() {
            Node::Const(_) | Node::Var(_) => 0,
            Node::Add(xs) | Node::Mul(xs) => xs.iter().map(Expr::size).sum(),
            Node::Pow(a, b) => a.size() + b.size(),
            Node::Neg(a) | Node::Call(_, a) | Node::Dt(a) => a.size(),
        }
    }

    /// Rebuilds this node from new children through the simplifying
    /// constructors.
    pub(crate) fn rebuild(&self, children: Vec<Expr>) -> Expr {
        let mut it = children.into_iter();
        match self.node() {
            Node::Const(_) | Node::Var(_) => self.clone(),
            Node::Add(_) => Expr::add_all(it),
            Node::Mul(_) => Expr::mul_all(it),
            Node::Pow(..) => {
                let b = it.next().unwrap();
                let e = it.next().unwrap();
                b.pow(&e)
            }
            Node::Neg(_) => it.next().unwrap().neg(),
            Node::Call(f, _) => Expr::call(*f, &it.next().unwrap()),
            Node::Dt(_) => it.next().unwrap().dt(),
        }
    }

    pub(crate) fn children(&self) -> Vec<&Expr> {
        match self.node() {
            Node::Const(_) | Node::Var(_) => Vec::new(),
            Node::Add(xs) | Node::Mul(xs) => xs.iter().collect(),
            Node::Pow(a, b) => vec![a, b],
            Node::Neg(a) | Node::Call(_, a) | Node::Dt(a) => vec![a],
        }
    }

    /// Bottom-up structural map; `f` sees each rebuilt node and may replace it.
    pub fn map_bottom_up<E>(
        &self,
        f: &mut dyn FnMut(Expr) -> Result<Expr, E>,
    ) -> Result<Expr, E> {
        let kids = self.children();
        let rebuilt = if kids.is_empty() {
            self.clone()
        } else {
            let mut new_kids = Vec::with_capacity(kids.len());
            let mut changed = false;
            for k in kids {
                let n = k.map_bottom_up(f)?;
                changed |= !Arc::ptr_eq(&n.0, &k.0);
                new_kids.push(n);
            }
            if changed {
                self.rebuild(new_kids)
            } else {
                self.clone()
            }
        };
        f(rebuilt)
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::constant(v)
    }
}

impl From<Symbol> for Expr {
    fn from(s: Symbol) -> Self {
        Expr::var(s)
    }
}

impl From<&Symbol> for Expr {
    fn from(s: &Symbol) -> Self {
        Expr::var(s.clone())
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $body:expr) => {
        impl std::ops::$tr<Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self, rhs)
            }
        }
        impl std::ops::$tr<&Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self.clone(), rhs.clone())
            }
        }
        impl std::ops::$tr<f64> for Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self, Expr::constant(rhs))
            }
        }
        impl std::ops::$tr<Expr> for f64 {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(Expr::constant(self), rhs)
            }
        }
    };
}

binop!(Add, add, |a, b| Expr::add_all([a, b]));
binop!(Sub, sub, |a, b| Expr::add_all([a, b.neg()]));
binop!(Mul, mul, |a, b| Expr::mul_all([a, b]));
binop!(Div, div, |a, b| Expr::mul_all([a, b.recip()]));

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(&self)
    }
}

impl std::ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}
