//! Input/output blocks and their composition.
//!
//! A block holds differential equations `dx/dt = f`, explicit algebraic
//! equations `x = f` (with `f` independent of `x`) and implicit constraints
//! `0 = f`. Blocks are wired into an [`IOSystem`] and flattened by
//! [`connect_system`] into a single block, which [`compile`] turns into a
//! mass-matrix evaluator.

mod compile;
mod connect;
mod text;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::symcore::{substitute_symbols, Expr, SymError, Symbol, SymbolKind};

pub use compile::{compile, AlgebraicOutputs, CompileOptions, CompiledBlock, Scratch};
pub use connect::{connect_system, IOSystem};

/// Substitution rounds before an algebraic loop is reported.
pub const MAX_SUBSTITUTION_ROUNDS: usize = 100;
pub use text::{parse_block, BlockParseError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockError {
    #[error("state `{0}` is defined more than once")]
    DuplicateDefinition(String),
    #[error("input `{0}` is used but not declared")]
    UndeclaredInput(String),
    #[error("output `{0}` has no defining equation")]
    OutputWithoutEquation(String),
    #[error("algebraic state `{0}` appears in its own right-hand side")]
    AlgebraicSelfReference(String),
    #[error("{states} state(s) without definition but {constraints} implicit constraint(s)")]
    ConstraintCountMismatch { states: usize, constraints: usize },
    #[error("symbol `{0}` has the wrong kind for its role")]
    WrongKind(String),
    #[error("name collision on `{0}`")]
    NameCollision(String),
    #[error("connection endpoint `{0}` does not exist")]
    DanglingEndpoint(String),
    #[error("input `{0}` is driven by more than one output")]
    DoublyDrivenInput(String),
    #[error("algebraic substitution did not reach a fixpoint (loop through `{0}`)")]
    CyclicAlgebraicDependency(String),
    #[error("time derivative of `{0}` enters its own right-hand side non-linearly")]
    NonlinearDerivativeLoop(String),
    #[error("block is not flat: {0}")]
    NotFlat(String),
    #[error("order does not match the block's {0}")]
    OrderMismatch(&'static str),
    #[error(transparent)]
    Symbolic(#[from] SymError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EquationKind {
    Differential,
    Algebraic,
    Constraint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub kind: EquationKind,
    pub lhs: Option<Symbol>,
    pub rhs: Expr,
}

impl Equation {
    /// `d(state)/dt = rhs`
    pub fn differential(state: Symbol, rhs: Expr) -> Self {
        Equation { kind: EquationKind::Differential, lhs: Some(state), rhs }
    }

    /// `state = rhs`
    pub fn algebraic(state: Symbol, rhs: Expr) -> Self {
        Equation { kind: EquationKind::Algebraic, lhs: Some(state), rhs }
    }

    /// `0 = rhs`
    pub fn constraint(rhs: Expr) -> Self {
        Equation { kind: EquationKind::Constraint, lhs: None, rhs }
    }

    fn map_rhs(&self, f: impl FnOnce(&Expr) -> Expr) -> Self {
        Equation { kind: self.kind, lhs: self.lhs.clone(), rhs: f(&self.rhs) }
    }
}

/// A validated set of equations with declared inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct IOBlock {
    name: String,
    equations: Vec<Equation>,
    inputs: Vec<Symbol>,
    outputs: Vec<Symbol>,
    defaults: BTreeMap<Symbol, f64>,
    /// States covered by implicit constraints, paired with constraint order.
    constrained: Vec<Symbol>,
}

/// Validates and builds a block.
pub fn make_block(
    name: impl Into<String>,
    equations: Vec<Equation>,
    inputs: Vec<Symbol>,
    outputs: Vec<Symbol>,
) -> Result<IOBlock, BlockError> {
    let name = name.into();
    for i in &inputs {
        if !i.is_input() {
            return Err(BlockError::WrongKind(i.path()));
        }
    }
    for o in &outputs {
        if !o.is_state() {
            return Err(BlockError::WrongKind(o.path()));
        }
    }

    // every symbol path maps to a single kind
    let mut seen: HashMap<String, SymbolKind> = HashMap::new();
    let mut check = |s: &Symbol| -> Result<(), BlockError> {
        match seen.get(&s.path()) {
            Some(k) if k != s.kind() => Err(BlockError::NameCollision(s.path())),
            Some(_) => Ok(()),
            None => {
                seen.insert(s.path(), s.kind().clone());
                Ok(())
            }
        }
    };
    for s in inputs.iter().chain(outputs.iter()) {
        check(s)?;
    }
    for eq in &equations {
        if let Some(l) = &eq.lhs {
            check(l)?;
        }
        for s in eq.rhs.free_symbols() {
            check(&s)?;
        }
    }
    let declared: BTreeSet<&Symbol> = inputs.iter().collect();
    if declared.len() != inputs.len() {
        return Err(BlockError::NameCollision("duplicate input".into()));
    }

    let mut defined: BTreeSet<Symbol> = BTreeSet::new();
    let mut constraint_count = 0;
    for eq in &equations {
        match (&eq.kind, &eq.lhs) {
            (EquationKind::Constraint, None) => constraint_count += 1,
            (EquationKind::Constraint, Some(l)) => return Err(BlockError::WrongKind(l.path())),
            (_, None) => return Err(BlockError::WrongKind("missing left-hand side".into())),
            (kind, Some(l)) => {
                if !l.is_state() {
                    return Err(BlockError::WrongKind(l.path()));
                }
                if !defined.insert(l.clone()) {
                    return Err(BlockError::DuplicateDefinition(l.path()));
                }
                if *kind == EquationKind::Algebraic && eq.rhs.depends_on(l) {
                    return Err(BlockError::AlgebraicSelfReference(l.path()));
                }
            }
        }
        for s in eq.rhs.free_symbols() {
            if s.is_input() && !declared.contains(&s) {
                return Err(BlockError::UndeclaredInput(s.path()));
            }
        }
    }

    // states without a defining equation must be covered by constraints
    let mut undefined: Vec<Symbol> = Vec::new();
    let mut push_undefined = |s: &Symbol| {
        if s.is_state() && !defined.contains(s) && !undefined.contains(s) {
            undefined.push(s.clone());
        }
    };
    for o in &outputs {
        push_undefined(o);
    }
    for eq in &equations {
        for s in eq.rhs.free_symbols() {
            push_undefined(&s);
        }
    }
    if undefined.len() != constraint_count {
        if let Some(o) = outputs.iter().find(|o| undefined.contains(o)) {
            return Err(BlockError::OutputWithoutEquation(o.path()));
        }
        return Err(BlockError::ConstraintCountMismatch {
            states: undefined.len(),
            constraints: constraint_count,
        });
    }

    Ok(IOBlock { name, equations, inputs, outputs, defaults: BTreeMap::new(), constrained: undefined })
}

impl IOBlock {
    /// Attaches default parameter values.
    pub fn with_defaults<I, S>(mut self, defaults: I) -> Result<Self, BlockError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let params = self.params();
        for (name, v) in defaults {
            let sym = Symbol::from_path(name.as_ref(), SymbolKind::Parameter);
            if !params.contains(&sym) {
                return Err(BlockError::DanglingEndpoint(sym.path()));
            }
            self.defaults.insert(sym, v);
        }
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn equations(&self) -> &[Equation] {
        &self.equations
    }

    pub fn inputs(&self) -> &[Symbol] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Symbol] {
        &self.outputs
    }

    pub fn defaults(&self) -> &BTreeMap<Symbol, f64> {
        &self.defaults
    }

    pub fn default_of(&self, path: &str) -> Option<f64> {
        self.defaults.get(&Symbol::from_path(path, SymbolKind::Parameter)).copied()
    }

    /// States covered by implicit constraints, in constraint order.
    pub fn constrained_states(&self) -> &[Symbol] {
        &self.constrained
    }

    /// All states: defined ones in equation order, then constraint-covered.
    pub fn states(&self) -> Vec<Symbol> {
        let mut out: Vec<Symbol> = self.equations.iter().filter_map(|e| e.lhs.clone()).collect();
        out.extend(self.constrained.iter().cloned());
        out
    }

    pub fn internal_states(&self) -> Vec<Symbol> {
        self.states().into_iter().filter(|s| !self.outputs.contains(s)).collect()
    }

    pub fn params(&self) -> BTreeSet<Symbol> {
        self.equations
            .iter()
            .flat_map(|e| e.rhs.free_symbols())
            .filter(Symbol::is_param)
            .collect()
    }

    pub fn differential_states(&self) -> Vec<Symbol> {
        self.equations
            .iter()
            .filter(|e| e.kind == EquationKind::Differential)
            .filter_map(|e| e.lhs.clone())
            .collect()
    }

    /// Defining right-hand side of a state, if it has one.
    pub fn definition(&self, state: &Symbol) -> Option<&Equation> {
        self.equations.iter().find(|e| e.lhs.as_ref() == Some(state))
    }

    pub fn is_flat(&self) -> bool {
        !self.equations.iter().any(|e| e.rhs.contains_dt())
    }
}

/// Substitutes `defs` into `e` until no defined symbol remains.
pub(crate) fn inline(e: &Expr, defs: &HashMap<Symbol, Expr>) -> Result<Expr, BlockError> {
    let mut cur = e.clone();
    for _ in 0..MAX_SUBSTITUTION_ROUNDS {
        let pending = cur.free_symbols().into_iter().find(|s| defs.contains_key(s));
        if pending.is_none() {
            return Ok(cur);
        }
        cur = substitute_symbols(&cur, defs);
    }
    let culprit = cur
        .free_symbols()
        .into_iter()
        .find(|s| defs.contains_key(s))
        .map(|s| s.path())
        .unwrap_or_default();
    Err(BlockError::CyclicAlgebraicDependency(culprit))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn swing() -> IOBlock {
        let w = Symbol::state("omega");
        let rhs = (Expr::var(Symbol::input("P_m"))
            - Expr::var(Symbol::param("D")) * Expr::var(w.clone())
            - Expr::var(Symbol::input("P_e")))
            / Expr::var(Symbol::param("M"));
        make_block(
            "swing",
            vec![Equation::differential(w.clone(), rhs)],
            vec![Symbol::input("P_m"), Symbol::input("P_e")],
            vec![w],
        )
        .unwrap()
    }

    #[test]
    fn swing_block_has_two_internal_params() {
        let b = swing();
        let params: Vec<String> = b.params().iter().map(Symbol::path).collect();
        assert_eq!(params, vec!["D", "M"]);
        assert!(b.internal_states().is_empty());
    }

    #[test]
    fn output_without_equation() {
        let err = make_block(
            "swing",
            vec![],
            vec![Symbol::input("P_m")],
            vec![Symbol::state("omega")],
        )
        .unwrap_err();
        assert_eq!(err, BlockError::OutputWithoutEquation("omega".into()));
    }

    #[test]
    fn pid_block_internal_states() {
        let input = Expr::var(Symbol::input("input"));
        let int = Symbol::state("int");
        let pid = Symbol::state("pid");
        let out = Symbol::state("out");
        let b = make_block(
            "pid",
            vec![
                Equation::differential(int.clone(), input.clone()),
                Equation::algebraic(pid.clone(), input.clone() + Expr::var(int.clone()) + input.dt()),
                Equation::algebraic(out.clone(), 1.0 - Expr::var(pid.clone())),
            ],
            vec![Symbol::input("input")],
            vec![out],
        )
        .unwrap();
        assert_eq!(b.internal_states(), vec![int, pid]);
    }

    #[test]
    fn validation_errors() {
        let x = Symbol::state("x");
        let u = Expr::var(Symbol::input("u"));
        let dup = make_block(
            "b",
            vec![Equation::differential(x.clone(), u.clone()), Equation::algebraic(x.clone(), u.clone())],
            vec![Symbol::input("u")],
            vec![],
        );
        assert_eq!(dup.unwrap_err(), BlockError::DuplicateDefinition("x".into()));
        let undeclared = make_block("b", vec![Equation::differential(x.clone(), u.clone())], vec![], vec![]);
        assert_eq!(undeclared.unwrap_err(), BlockError::UndeclaredInput("u".into()));
        let selfref = make_block(
            "b",
            vec![Equation::algebraic(x.clone(), Expr::var(x.clone()) * 2.0)],
            vec![],
            vec![],
        );
        assert_eq!(selfref.unwrap_err(), BlockError::AlgebraicSelfReference("x".into()));
        let collide = make_block(
            "b",
            vec![Equation::differential(x.clone(), Expr::var(Symbol::param("x")))],
            vec![],
            vec![],
        );
        assert_eq!(collide.unwrap_err(), BlockError::NameCollision("x".into()));
    }

    #[test]
    fn implicit_constraint_covers_a_state() {
        let u = Symbol::state("u");
        let v = Symbol::state("v");
        let b = make_block(
            "c",
            vec![
                Equation::differential(u.clone(), -Expr::var(u.clone())),
                Equation::constraint(Expr::var(u.clone()) - Expr::var(v.clone())),
            ],
            vec![],
            vec![v.clone()],
        )
        .unwrap();
        assert_eq!(b.constrained_states(), &[v.clone()]);
        assert_eq!(b.states(), vec![u, v]);
    }
}
