use std::collections::{BTreeMap, HashMap, HashSet};

use super::{inline, make_block, BlockError, Equation, EquationKind, IOBlock};
use crate::symcore::{expand_derivative, partial, substitute_symbols, Expr, Node, Symbol, SymbolKind};

/// Several blocks plus output-to-input wiring.
#[derive(Debug, Clone)]
pub struct IOSystem {
    name: String,
    blocks: Vec<IOBlock>,
    /// (source output, target input), both qualified by block name.
    connections: Vec<(Symbol, Symbol)>,
    promoted_outputs: Vec<Symbol>,
    /// Qualified inner path -> outer name.
    promotions: BTreeMap<String, String>,
}

fn find_block<'a>(blocks: &'a [IOBlock], path: &str) -> Option<(&'a IOBlock, Symbol, usize)> {
    let (bname, rest) = path.split_once('.')?;
    let idx = blocks.iter().position(|b| b.name() == bname)?;
    let b = &blocks[idx];
    let sym = b
        .outputs()
        .iter()
        .chain(b.inputs().iter())
        .find(|s| s.path() == rest)?
        .clone();
    Some((b, sym, idx))
}

impl IOSystem {
    /// Wires `blocks` together. Endpoints are written `block.symbol`.
    /// Feedback loops are allowed.
    pub fn connect(
        name: impl Into<String>,
        blocks: Vec<IOBlock>,
        connections: &[(&str, &str)],
        promoted_outputs: &[&str],
    ) -> Result<Self, BlockError> {
        let mut names = HashSet::new();
        for b in &blocks {
            if !names.insert(b.name().to_owned()) {
                return Err(BlockError::NameCollision(b.name().to_owned()));
            }
        }
        let mut conns = Vec::new();
        let mut driven = HashSet::new();
        for (src, dst) in connections {
            let (_, s, _) = find_block(&blocks, src)
                .filter(|(b, s, _)| b.outputs().contains(s))
                .ok_or_else(|| BlockError::DanglingEndpoint(src.to_string()))?;
            let (dblock, d, _) = find_block(&blocks, dst)
                .filter(|(b, s, _)| b.inputs().contains(s))
                .ok_or_else(|| BlockError::DanglingEndpoint(dst.to_string()))?;
            if !driven.insert(dst.to_string()) {
                return Err(BlockError::DoublyDrivenInput(dst.to_string()));
            }
            let sblock = src.split_once('.').unwrap().0;
            conns.push((s.prefixed(sblock), d.prefixed(dblock.name())));
        }
        let mut promoted = Vec::new();
        for p in promoted_outputs {
            let (b, s, _) = find_block(&blocks, p)
                .filter(|(b, s, _)| b.outputs().contains(s))
                .ok_or_else(|| BlockError::DanglingEndpoint(p.to_string()))?;
            promoted.push(s.prefixed(b.name()));
        }
        Ok(IOSystem {
            name: name.into(),
            blocks,
            connections: conns,
            promoted_outputs: promoted,
            promotions: BTreeMap::new(),
        })
    }

    /// Lifts a qualified inner name (e.g. `swing.D`) to an outer name.
    pub fn promote(mut self, inner: &str, outer: &str) -> Result<Self, BlockError> {
        let (bname, rest) =
            inner.split_once('.').ok_or_else(|| BlockError::DanglingEndpoint(inner.to_owned()))?;
        let block = self
            .blocks
            .iter()
            .find(|b| b.name() == bname)
            .ok_or_else(|| BlockError::DanglingEndpoint(inner.to_owned()))?;
        let exists = block
            .equations()
            .iter()
            .flat_map(|e| e.rhs.free_symbols().into_iter().chain(e.lhs.clone()))
            .chain(block.inputs().iter().cloned())
            .any(|s| s.path() == rest);
        if !exists {
            return Err(BlockError::DanglingEndpoint(inner.to_owned()));
        }
        if self.promotions.values().any(|v| v == outer) {
            return Err(BlockError::NameCollision(outer.to_owned()));
        }
        self.promotions.insert(inner.to_owned(), outer.to_owned());
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn blocks(&self) -> &[IOBlock] {
        &self.blocks
    }

    fn is_connected(&self, qualified_input: &Symbol) -> bool {
        self.connections.iter().any(|(_, d)| d == qualified_input)
    }

    /// Interface symbols (open inputs and promoted outputs), qualified.
    fn interface(&self) -> Vec<Symbol> {
        let mut v: Vec<Symbol> = self
            .blocks
            .iter()
            .flat_map(|b| b.inputs().iter().map(move |i| i.prefixed(b.name())))
            .filter(|i| !self.is_connected(i))
            .collect();
        v.extend(self.promoted_outputs.iter().cloned());
        v
    }

    /// Outer name of a qualified symbol.
    fn outer(&self, qualified: &Symbol, interface_counts: &HashMap<String, usize>) -> Symbol {
        if *qualified.kind() == SymbolKind::Time {
            return Symbol::time();
        }
        if let Some(o) = self.promotions.get(&qualified.path()) {
            return Symbol::from_path(o, qualified.kind().clone());
        }
        let is_interface = self.promoted_outputs.contains(qualified)
            || (qualified.is_input() && !self.is_connected(qualified));
        let inner = strip_first(qualified);
        if is_interface && interface_counts.get(&inner.path()).copied() == Some(1) {
            inner
        } else {
            qualified.clone()
        }
    }

    /// Inputs of the composite after flattening.
    pub fn open_inputs(&self) -> Vec<Symbol> {
        let counts = self.interface_counts();
        self.interface()
            .into_iter()
            .filter(Symbol::is_input)
            .map(|s| self.outer(&s, &counts))
            .collect()
    }

    fn interface_counts(&self) -> HashMap<String, usize> {
        let mut counts = HashMap::new();
        for s in self.interface() {
            *counts.entry(strip_first(&s).path()).or_insert(0) += 1;
        }
        counts
    }
}

fn strip_first(s: &Symbol) -> Symbol {
    let ns = s.namespace();
    let mut path: Vec<&str> = ns[1..].iter().map(String::as_str).collect();
    path.push(s.name());
    Symbol::from_path(&path.join("."), s.kind().clone())
}

/// Inlines algebraic definitions inside the arguments of every `Dt` node.
fn inline_dt_args(e: &Expr, defs: &HashMap<Symbol, Expr>) -> Result<Expr, BlockError> {
    if !e.contains_dt() {
        return Ok(e.clone());
    }
    e.map_bottom_up(&mut |n| match n.node() {
        Node::Dt(inner) => Ok(inline(inner, defs)?.dt()),
        _ => Ok(n),
    })
}

fn derivative_placeholder(x: &Symbol) -> Symbol {
    Symbol::state(format!("#d:{}", x.path()))
}

/// Resolves `dx/dt` for every differential state as a `Dt`-free expression
/// of states, inputs, parameters and time.
///
/// A derivative may depend on derivatives through algebraic states (the
/// derivative term of a controller fed by the state it controls). Such
/// dependencies form a linear system in the unknown derivatives which is
/// eliminated in state order; a derivative entering its own equation
/// non-affinely is an error.
fn resolve_derivatives(
    diff: &[(Symbol, Expr)],
    alg: &HashMap<Symbol, Expr>,
) -> Result<(HashMap<Symbol, Expr>, HashSet<Symbol>), BlockError> {
    let placeholders: HashMap<Symbol, Expr> =
        diff.iter().map(|(x, _)| (x.clone(), Expr::var(derivative_placeholder(x)))).collect();
    let mut implicit = HashSet::new();
    let mut rows: Vec<Expr> = Vec::with_capacity(diff.len());
    for (x, rhs) in diff {
        let full = inline(rhs, alg)?;
        if full.contains_dt() {
            implicit.insert(x.clone());
            rows.push(expand_derivative(&full, &placeholders)?);
        } else {
            rows.push(full);
        }
    }

    // forward elimination
    for k in 0..diff.len() {
        let (x, _) = &diff[k];
        let dx = derivative_placeholder(x);
        let mut r = rows[k].clone();
        if r.depends_on(&dx) {
            let c = partial(&r, &dx)?;
            if c.depends_on(&dx) {
                return Err(BlockError::NonlinearDerivativeLoop(x.path()));
            }
            let r0 = substitute_symbols(&r, &HashMap::from([(dx.clone(), Expr::zero())]));
            r = r0 / (1.0 - c);
            rows[k] = r.clone();
        }
        let m = HashMap::from([(dx, r)]);
        for row in rows.iter_mut().skip(k + 1) {
            *row = substitute_symbols(row, &m);
        }
    }
    // back substitution
    let mut resolved: HashMap<Symbol, Expr> = HashMap::new();
    for k in (0..diff.len()).rev() {
        let m: HashMap<Symbol, Expr> = resolved
            .iter()
            .map(|(x, e)| (derivative_placeholder(x), e.clone()))
            .collect();
        let r = substitute_symbols(&rows[k], &m);
        resolved.insert(diff[k].0.clone(), r);
    }
    Ok((resolved, implicit))
}

/// Flattens a composite into one block.
///
/// 1. Connected inputs are replaced by the outputs driving them.
/// 2. Time derivatives are expanded, substituting algebraic definitions
///    inside each `Dt` and known differentials for states.
/// 3. Algebraic states that are not outputs are substituted away.
///
/// Substitution loops are capped at [`MAX_SUBSTITUTION_ROUNDS`].
pub fn connect_system(sys: &IOSystem) -> Result<IOBlock, BlockError> {
    let counts = sys.interface_counts();

    // namespacing
    let mut seen: HashMap<String, (usize, Symbol)> = HashMap::new();
    let mut equations: Vec<Equation> = Vec::new();
    let mut defaults: BTreeMap<Symbol, f64> = BTreeMap::new();
    for (bi, b) in sys.blocks.iter().enumerate() {
        let mut symbols: Vec<Symbol> = b.inputs().to_vec();
        for eq in b.equations() {
            symbols.extend(eq.lhs.iter().cloned());
            symbols.extend(eq.rhs.free_symbols());
        }
        let mut rename: HashMap<Symbol, Expr> = HashMap::new();
        for s in symbols {
            if rename.contains_key(&s) {
                continue;
            }
            let outer = sys.outer(&s.prefixed(b.name()), &counts);
            if let Some((other, prev)) = seen.get(&outer.path()) {
                if *other != bi || *prev != s {
                    return Err(BlockError::NameCollision(outer.path()));
                }
            }
            seen.insert(outer.path(), (bi, s.clone()));
            rename.insert(s, Expr::var(outer));
        }
        for eq in b.equations() {
            let lhs = eq.lhs.as_ref().map(|l| rename[l].as_var().unwrap().clone());
            equations.push(Equation { kind: eq.kind, lhs, rhs: substitute_symbols(&eq.rhs, &rename) });
        }
        for (p, v) in b.defaults() {
            if let Some(e) = rename.get(p) {
                defaults.insert(e.as_var().unwrap().clone(), *v);
            }
        }
    }

    // step 1: connected inputs become references to their sources
    let wiring: HashMap<Symbol, Expr> = sys
        .connections
        .iter()
        .map(|(src, dst)| (sys.outer(dst, &counts), Expr::var(sys.outer(src, &counts))))
        .collect();
    let equations: Vec<Equation> =
        equations.iter().map(|e| e.map_rhs(|r| substitute_symbols(r, &wiring))).collect();

    let outputs: Vec<Symbol> = sys.promoted_outputs.iter().map(|o| sys.outer(o, &counts)).collect();
    let inputs = sys.open_inputs();

    // step 2: derivatives
    let alg: HashMap<Symbol, Expr> = equations
        .iter()
        .filter(|e| e.kind == EquationKind::Algebraic)
        .map(|e| (e.lhs.clone().unwrap(), e.rhs.clone()))
        .collect();
    let diff: Vec<(Symbol, Expr)> = equations
        .iter()
        .filter(|e| e.kind == EquationKind::Differential)
        .map(|e| (e.lhs.clone().unwrap(), e.rhs.clone()))
        .collect();
    let any_dt = equations.iter().any(|e| e.rhs.contains_dt());
    let equations = if any_dt {
        let (resolved, implicit) = resolve_derivatives(&diff, &alg)?;
        let mut out = Vec::with_capacity(equations.len());
        for e in &equations {
            let lhs_implicit = e.kind == EquationKind::Differential
                && implicit.contains(e.lhs.as_ref().unwrap());
            if lhs_implicit {
                out.push(Equation::differential(e.lhs.clone().unwrap(), resolved[e.lhs.as_ref().unwrap()].clone()));
            } else if e.rhs.contains_dt() {
                let r = expand_derivative(&inline_dt_args(&e.rhs, &alg)?, &resolved)?;
                out.push(Equation { kind: e.kind, lhs: e.lhs.clone(), rhs: r });
            } else {
                out.push(e.clone());
            }
        }
        out
    } else {
        equations
    };

    // step 3: eliminate algebraic states that are not outputs
    let elim: HashMap<Symbol, Expr> = equations
        .iter()
        .filter(|e| e.kind == EquationKind::Algebraic && !outputs.contains(e.lhs.as_ref().unwrap()))
        .map(|e| (e.lhs.clone().unwrap(), e.rhs.clone()))
        .collect();
    // every eliminated definition must close, even when nothing references it
    let mut elim_sorted: Vec<&Symbol> = elim.keys().collect();
    elim_sorted.sort();
    for s in elim_sorted {
        inline(&elim[s], &elim)?;
    }
    let mut flat = Vec::new();
    for e in &equations {
        match e.kind {
            EquationKind::Algebraic if elim.contains_key(e.lhs.as_ref().unwrap()) => {}
            EquationKind::Algebraic => {
                let y = e.lhs.clone().unwrap();
                let r = inline(&e.rhs, &elim)?;
                if r.depends_on(&y) {
                    flat.push(Equation::constraint(r - Expr::var(y)));
                } else {
                    flat.push(Equation::algebraic(y, r));
                }
            }
            _ => flat.push(Equation { kind: e.kind, lhs: e.lhs.clone(), rhs: inline(&e.rhs, &elim)? }),
        }
    }
    let mut block = make_block(sys.name.clone(), flat, inputs, outputs)?;
    block.defaults = defaults.into_iter().filter(|(p, _)| block.params().contains(p)).collect();
    Ok(block)
}
