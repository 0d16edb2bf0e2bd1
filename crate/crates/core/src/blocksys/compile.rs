use std::collections::HashMap;

use super::{inline, BlockError, EquationKind, IOBlock};
use crate::scalar::Scalar;
use crate::symcore::{Expr, Func, Node, SymError, Symbol};

/// How explicit algebraic states are compiled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlgebraicOutputs {
    /// Rows `0 = rhs - x` with zero mass.
    #[default]
    Constraints,
    /// Substituted away; their values are exposed through
    /// [`CompiledBlock::observe`] instead of occupying state rows.
    Observed,
}

#[derive(Debug, Clone, Default)]
pub struct CompileOptions {
    pub states: Option<Vec<Symbol>>,
    pub inputs: Option<Vec<Symbol>>,
    pub params: Option<Vec<Symbol>>,
    pub algebraic: AlgebraicOutputs,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    State(u32),
    Input(u32),
    Param(u32),
    Time,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    PowConst(u32, f64),
    Pow(u32, u32),
    Call(Func, u32),
}

/// Straight-line register program with shared subexpressions.
#[derive(Debug, Clone, Default)]
struct Tape {
    ops: Vec<Op>,
    outputs: Vec<u32>,
}

struct Lowering<'a> {
    tape: Tape,
    memo: HashMap<Expr, u32>,
    slots: &'a HashMap<Symbol, Op>,
}

impl Lowering<'_> {
    fn push(&mut self, op: Op) -> u32 {
        self.tape.ops.push(op);
        (self.tape.ops.len() - 1) as u32
    }

    fn lower(&mut self, e: &Expr) -> Result<u32, SymError> {
        if let Some(&r) = self.memo.get(e) {
            return Ok(r);
        }
        let r = match e.node() {
            Node::Const(v) => self.push(Op::Const(*v)),
            Node::Var(s) => {
                let op = *self.slots.get(s).ok_or_else(|| SymError::UnboundSymbol(s.path()))?;
                self.push(op)
            }
            Node::Add(xs) => {
                let mut acc = self.lower(&xs[0])?;
                for x in &xs[1..] {
                    acc = match x.node() {
                        Node::Neg(inner) => {
                            let r = self.lower(inner)?;
                            self.push(Op::Sub(acc, r))
                        }
                        _ => {
                            let r = self.lower(x)?;
                            self.push(Op::Add(acc, r))
                        }
                    };
                }
                acc
            }
            Node::Mul(xs) => {
                let mut acc = self.lower(&xs[0])?;
                for x in &xs[1..] {
                    acc = match x.node() {
                        Node::Pow(b, k) if k.as_const() == Some(-1.0) => {
                            let r = self.lower(b)?;
                            self.push(Op::Div(acc, r))
                        }
                        _ => {
                            let r = self.lower(x)?;
                            self.push(Op::Mul(acc, r))
                        }
                    };
                }
                acc
            }
            Node::Pow(b, k) => {
                let rb = self.lower(b)?;
                match k.as_const() {
                    Some(c) => self.push(Op::PowConst(rb, c)),
                    None => {
                        let rk = self.lower(k)?;
                        self.push(Op::Pow(rb, rk))
                    }
                }
            }
            Node::Neg(a) => {
                let r = self.lower(a)?;
                self.push(Op::Neg(r))
            }
            Node::Call(f, a) => {
                let r = self.lower(a)?;
                self.push(Op::Call(*f, r))
            }
            Node::Dt(_) => return Err(SymError::ContainsDerivative(e.to_prefix())),
        };
        self.memo.insert(e.clone(), r);
        Ok(r)
    }
}

impl Tape {
    fn build(exprs: &[Expr], slots: &HashMap<Symbol, Op>) -> Result<Tape, SymError> {
        let mut l = Lowering { tape: Tape::default(), memo: HashMap::new(), slots };
        let mut outs = Vec::with_capacity(exprs.len());
        for e in exprs {
            outs.push(l.lower(e)?);
        }
        l.tape.outputs = outs;
        Ok(l.tape)
    }

    fn run<S: Scalar>(
        &self,
        x: &[S],
        u: &[S],
        p: &[S],
        t: f64,
        regs: &mut Vec<S>,
    ) -> Result<(), SymError> {
        use crate::symcore::{apply_func, pow_const, pow_general};
        regs.clear();
        regs.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => S::from_f64(c),
                Op::State(i) => x[i as usize],
                Op::Input(i) => u[i as usize],
                Op::Param(i) => p[i as usize],
                Op::Time => S::from_f64(t),
                Op::Add(a, b) => regs[a as usize] + regs[b as usize],
                Op::Sub(a, b) => regs[a as usize] - regs[b as usize],
                Op::Mul(a, b) => regs[a as usize] * regs[b as usize],
                Op::Div(a, b) => {
                    let d = regs[b as usize];
                    if d.value() == 0.0 {
                        return Err(SymError::DomainError("division by zero".into()));
                    }
                    regs[a as usize] / d
                }
                Op::Neg(a) => -regs[a as usize],
                Op::PowConst(a, k) => pow_const(regs[a as usize], k)?,
                Op::Pow(a, b) => pow_general(regs[a as usize], regs[b as usize])?,
                Op::Call(f, a) => apply_func(f, regs[a as usize])?,
            };
            regs.push(v);
        }
        Ok(())
    }
}

/// Caller-owned evaluation buffer.
#[derive(Debug, Clone, Default)]
pub struct Scratch<S> {
    regs: Vec<S>,
    /// Free for wrappers that need an input or coupling buffer.
    pub(crate) aux: Vec<S>,
}

impl<S> Scratch<S> {
    pub fn new() -> Self {
        Scratch { regs: Vec::new(), aux: Vec::new() }
    }
}

/// A flat block compiled to `M dx/dt = f(x, i, p, t)` with diagonal `M`.
#[derive(Debug, Clone)]
pub struct CompiledBlock {
    name: String,
    states: Vec<Symbol>,
    inputs: Vec<Symbol>,
    params: Vec<Symbol>,
    mass: Vec<f64>,
    defaults: Vec<Option<f64>>,
    observed: Vec<Symbol>,
    rows: Tape,
    observe: Tape,
}

fn check_order(
    given: &Option<Vec<Symbol>>,
    natural: Vec<Symbol>,
    what: &'static str,
) -> Result<Vec<Symbol>, BlockError> {
    match given {
        None => Ok(natural),
        Some(order) => {
            let mut a = order.clone();
            let mut b = natural;
            a.sort();
            b.sort();
            if a != b {
                return Err(BlockError::OrderMismatch(what));
            }
            Ok(order.clone())
        }
    }
}

/// Compiles a flat block into an evaluator.
pub fn compile(block: &IOBlock, opts: &CompileOptions) -> Result<CompiledBlock, BlockError> {
    if let Some(e) = block.equations().iter().find(|e| e.rhs.contains_dt()) {
        return Err(BlockError::NotFlat(e.rhs.to_prefix()));
    }
    let observed_mode = opts.algebraic == AlgebraicOutputs::Observed;
    let alg: HashMap<Symbol, Expr> = block
        .equations()
        .iter()
        .filter(|e| e.kind == EquationKind::Algebraic)
        .map(|e| (e.lhs.clone().unwrap(), e.rhs.clone()))
        .collect();

    // row expression and mass for every state
    let mut row_of: HashMap<Symbol, (Expr, f64)> = HashMap::new();
    let mut natural_states = Vec::new();
    let mut observed = Vec::new();
    let mut observed_exprs = Vec::new();
    let prep = |e: &Expr| -> Result<Expr, BlockError> {
        if observed_mode {
            inline(e, &alg)
        } else {
            Ok(e.clone())
        }
    };
    let mut constraints = Vec::new();
    for eq in block.equations() {
        match eq.kind {
            EquationKind::Differential => {
                let x = eq.lhs.clone().unwrap();
                row_of.insert(x.clone(), (prep(&eq.rhs)?, 1.0));
                natural_states.push(x);
            }
            EquationKind::Algebraic => {
                let x = eq.lhs.clone().unwrap();
                if observed_mode {
                    observed.push(x.clone());
                    observed_exprs.push(prep(&eq.rhs)?);
                } else {
                    row_of.insert(x.clone(), (eq.rhs.clone() - Expr::var(x.clone()), 0.0));
                    natural_states.push(x);
                }
            }
            EquationKind::Constraint => constraints.push(prep(&eq.rhs)?),
        }
    }
    for (x, c) in block.constrained_states().iter().zip(constraints) {
        row_of.insert(x.clone(), (c, 0.0));
        natural_states.push(x.clone());
    }

    let states = check_order(&opts.states, natural_states, "states")?;
    let inputs = check_order(&opts.inputs, block.inputs().to_vec(), "inputs")?;
    let mut natural_params: Vec<Symbol> = block.params().into_iter().collect();
    natural_params.sort();
    let params = check_order(&opts.params, natural_params, "parameters")?;

    let mut slots: HashMap<Symbol, Op> = HashMap::new();
    for (i, s) in states.iter().enumerate() {
        slots.insert(s.clone(), Op::State(i as u32));
    }
    for (i, s) in inputs.iter().enumerate() {
        slots.insert(s.clone(), Op::Input(i as u32));
    }
    for (i, s) in params.iter().enumerate() {
        slots.insert(s.clone(), Op::Param(i as u32));
    }
    slots.insert(Symbol::time(), Op::Time);

    let row_exprs: Vec<Expr> = states.iter().map(|s| row_of[s].0.clone()).collect();
    let mass = states.iter().map(|s| row_of[s].1).collect();
    let rows = Tape::build(&row_exprs, &slots)?;
    let observe = Tape::build(&observed_exprs, &slots)?;
    let defaults = params.iter().map(|p| block.defaults().get(p).copied()).collect();
    Ok(CompiledBlock {
        name: block.name().to_owned(),
        states,
        inputs,
        params,
        mass,
        defaults,
        observed,
        rows,
        observe,
    })
}

impl CompiledBlock {
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn states(&self) -> &[Symbol] {
        &self.states
    }
    pub fn inputs(&self) -> &[Symbol] {
        &self.inputs
    }
    pub fn params(&self) -> &[Symbol] {
        &self.params
    }
    /// Diagonal of the mass matrix, aligned with [`states`](Self::states).
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
    pub fn observed(&self) -> &[Symbol] {
        &self.observed
    }
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, path: &str) -> Option<usize> {
        self.states.iter().position(|s| s.path() == path)
    }
    pub fn input_index(&self, path: &str) -> Option<usize> {
        self.inputs.iter().position(|s| s.path() == path)
    }
    pub fn param_index(&self, path: &str) -> Option<usize> {
        self.params.iter().position(|s| s.path() == path)
    }
    pub fn observed_index(&self, path: &str) -> Option<usize> {
        self.observed.iter().position(|s| s.path() == path)
    }

    pub fn default_params(&self) -> Vec<Option<f64>> {
        self.defaults.clone()
    }

    /// Parameter vector from defaults; errors on a parameter without one.
    pub fn params_from_defaults(&self) -> Result<Vec<f64>, SymError> {
        self.params
            .iter()
            .zip(&self.defaults)
            .map(|(s, d)| d.ok_or_else(|| SymError::UnboundSymbol(s.path())))
            .collect()
    }

    /// Right-hand side rows: `f` for differential states, residuals for
    /// zero-mass rows.
    pub fn rhs<S: Scalar>(
        &self,
        x: &[S],
        u: &[S],
        p: &[S],
        t: f64,
        out: &mut [S],
        scratch: &mut Scratch<S>,
    ) -> Result<(), SymError> {
        self.rows.run(x, u, p, t, &mut scratch.regs)?;
        for (o, &r) in out.iter_mut().zip(&self.rows.outputs) {
            *o = scratch.regs[r as usize];
        }
        Ok(())
    }

    /// Values of observed algebraic outputs.
    pub fn observe<S: Scalar>(
        &self,
        x: &[S],
        u: &[S],
        p: &[S],
        t: f64,
        out: &mut [S],
        scratch: &mut Scratch<S>,
    ) -> Result<(), SymError> {
        self.observe.run(x, u, p, t, &mut scratch.regs)?;
        for (o, &r) in out.iter_mut().zip(&self.observe.outputs) {
            *o = scratch.regs[r as usize];
        }
        Ok(())
    }

    /// Inputs read by the observed outputs.
    pub fn observed_input_dependencies(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .observe
            .ops
            .iter()
            .filter_map(|op| match op {
                Op::Input(i) => Some(*i as usize),
                _ => None,
            })
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Number of tape instructions, after subexpression sharing.
    pub fn op_count(&self) -> usize {
        self.rows.ops.len() + self.observe.ops.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocksys::{make_block, Equation};
    use crate::blocksys::tests::swing;

    #[test]
    fn swing_at_equilibrium() {
        let c = compile(&swing(), &CompileOptions::default()).unwrap();
        assert_eq!(c.mass(), &[1.0]);
        let u = [1.0, 1.0];
        let p: Vec<f64> = c.params().iter().map(|s| if s.name() == "M" { 1.0 } else { 1.0 }).collect();
        let mut out = [f64::NAN];
        c.rhs(&[0.0], &u, &p, 0.0, &mut out, &mut Scratch::new()).unwrap();
        assert_eq!(out, [0.0]);
    }

    #[test]
    fn implicit_constraint_has_zero_mass() {
        let u = Symbol::state("u");
        let v = Symbol::state("v");
        let b = make_block(
            "c",
            vec![
                Equation::differential(u.clone(), -Expr::var(u.clone())),
                Equation::constraint(Expr::var(u.clone()) - Expr::var(v.clone())),
            ],
            vec![],
            vec![v],
        )
        .unwrap();
        let c = compile(&b, &CompileOptions::default()).unwrap();
        assert_eq!(c.mass(), &[1.0, 0.0]);
        let mut out = [0.0; 2];
        c.rhs(&[2.0, 0.5], &[], &[], 0.0, &mut out, &mut Scratch::new()).unwrap();
        assert_eq!(out, [-2.0, 1.5]);
    }

    #[test]
    fn algebraic_outputs_as_rows_or_observed() {
        let x = Symbol::state("x");
        let y = Symbol::state("y");
        let b = make_block(
            "b",
            vec![
                Equation::differential(x.clone(), -Expr::var(y.clone())),
                Equation::algebraic(y.clone(), Expr::var(x.clone()) * 2.0),
            ],
            vec![],
            vec![y.clone()],
        )
        .unwrap();
        let rows = compile(&b, &CompileOptions::default()).unwrap();
        assert_eq!(rows.mass(), &[1.0, 0.0]);
        let mut out = [0.0; 2];
        rows.rhs(&[1.0, 2.0], &[], &[], 0.0, &mut out, &mut Scratch::new()).unwrap();
        assert_eq!(out, [-2.0, 0.0]);

        let opts = CompileOptions { algebraic: AlgebraicOutputs::Observed, ..Default::default() };
        let obs = compile(&b, &opts).unwrap();
        assert_eq!(obs.dim(), 1);
        let mut out = [0.0];
        obs.rhs(&[1.5], &[], &[], 0.0, &mut out, &mut Scratch::new()).unwrap();
        assert_eq!(out, [-3.0]);
        obs.observe(&[1.5], &[], &[], 0.0, &mut out, &mut Scratch::new()).unwrap();
        assert_eq!(out, [3.0]);
    }

    #[test]
    fn shared_subexpressions_lower_once() {
        let x = Symbol::state("x");
        let s = Expr::var(x.clone()).sin();
        let b = make_block(
            "b",
            vec![Equation::differential(x.clone(), s.clone() * s.clone() + s)],
            vec![],
            vec![],
        )
        .unwrap();
        let c = compile(&b, &CompileOptions::default()).unwrap();
        // x, sin x, sin x * sin x, + sin x
        assert_eq!(c.op_count(), 4);
    }

    #[test]
    fn order_mismatch_and_unflat() {
        let opts = CompileOptions { states: Some(vec![Symbol::state("nope")]), ..Default::default() };
        assert_eq!(compile(&swing(), &opts).unwrap_err(), BlockError::OrderMismatch("states"));
        let x = Symbol::state("x");
        let b = make_block(
            "b",
            vec![Equation::differential(x.clone(), Expr::var(Symbol::param("k")).dt())],
            vec![],
            vec![],
        )
        .unwrap();
        assert!(matches!(compile(&b, &CompileOptions::default()), Err(BlockError::NotFlat(_))));
    }
}
