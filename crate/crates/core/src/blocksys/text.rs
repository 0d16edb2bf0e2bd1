//! Line-oriented block description.
//!
//! ```text
//! block swing
//! input P_m P_e
//! output omega
//! param M = 2.0
//! param D = 1.0
//! diff omega = (* (+ P_m (neg (* D omega)) (neg P_e)) (^ M -1.0))
//! end
//! ```
//!
//! `alg y = ...` declares an explicit algebraic state and `constraint ...`
//! an implicit residual. Symbols are classified by declaration: names listed
//! under `input` or `param` take that kind, `t` is time, anything else is a
//! state. Lines starting with `#` are comments.

use std::collections::BTreeSet;

use thiserror::Error;

use super::{make_block, BlockError, Equation, EquationKind, IOBlock};
use crate::symcore::{parse_expr, ParseError, Symbol, SymbolKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlockParseError {
    #[error("line {0}: {1}")]
    Syntax(usize, String),
    #[error("line {0}: {1}")]
    Expr(usize, ParseError),
    #[error("missing `end`")]
    MissingEnd,
    #[error(transparent)]
    Block(#[from] BlockError),
}

enum RawEq {
    Diff(String, String),
    Alg(String, String),
    Constraint(String),
}

/// Parses one block from text.
pub fn parse_block(src: &str) -> Result<IOBlock, BlockParseError> {
    let mut name = None;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut params: Vec<(String, Option<f64>)> = Vec::new();
    let mut raw: Vec<(usize, RawEq)> = Vec::new();
    let mut ended = false;

    for (i, line) in src.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if ended {
            return Err(BlockParseError::Syntax(ln, "text after `end`".into()));
        }
        let (kw, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        if name.is_none() && kw != "block" {
            return Err(BlockParseError::Syntax(ln, "expected `block NAME`".into()));
        }
        let lhs_rhs = || -> Result<(String, String), BlockParseError> {
            let (l, r) = rest
                .split_once('=')
                .ok_or_else(|| BlockParseError::Syntax(ln, "expected `NAME = EXPR`".into()))?;
            Ok((l.trim().to_owned(), r.trim().to_owned()))
        };
        match kw {
            "block" if name.is_none() && !rest.is_empty() => name = Some(rest.to_owned()),
            "input" => inputs.extend(rest.split_whitespace().map(str::to_owned)),
            "output" => outputs.extend(rest.split_whitespace().map(str::to_owned)),
            "param" => match rest.split_once('=') {
                Some((p, v)) => {
                    let v = v
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| BlockParseError::Syntax(ln, format!("bad value `{}`", v.trim())))?;
                    params.push((p.trim().to_owned(), Some(v)));
                }
                None => params.extend(rest.split_whitespace().map(|p| (p.to_owned(), None))),
            },
            "diff" => {
                let (l, r) = lhs_rhs()?;
                raw.push((ln, RawEq::Diff(l, r)));
            }
            "alg" => {
                let (l, r) = lhs_rhs()?;
                raw.push((ln, RawEq::Alg(l, r)));
            }
            "constraint" => raw.push((ln, RawEq::Constraint(rest.to_owned()))),
            "end" => ended = true,
            _ => return Err(BlockParseError::Syntax(ln, format!("unexpected `{line}`"))),
        }
    }
    if !ended {
        return Err(BlockParseError::MissingEnd);
    }

    let input_set: BTreeSet<&str> = inputs.iter().map(String::as_str).collect();
    let param_set: BTreeSet<&str> = params.iter().map(|(p, _)| p.as_str()).collect();
    let kind_of = |p: &str| {
        if input_set.contains(p) {
            SymbolKind::Input
        } else if param_set.contains(p) {
            SymbolKind::Parameter
        } else if p == "t" {
            SymbolKind::Time
        } else {
            SymbolKind::State
        }
    };
    let expr = |ln: usize, s: &str| parse_expr(s, &kind_of).map_err(|e| BlockParseError::Expr(ln, e));
    let mut equations = Vec::with_capacity(raw.len());
    for (ln, r) in raw {
        equations.push(match r {
            RawEq::Diff(l, e) => Equation::differential(Symbol::from_path(&l, SymbolKind::State), expr(ln, &e)?),
            RawEq::Alg(l, e) => Equation::algebraic(Symbol::from_path(&l, SymbolKind::State), expr(ln, &e)?),
            RawEq::Constraint(e) => Equation::constraint(expr(ln, &e)?),
        });
    }

    let block = make_block(
        name.unwrap_or_default(),
        equations,
        inputs.iter().map(|p| Symbol::from_path(p, SymbolKind::Input)).collect(),
        outputs.iter().map(|p| Symbol::from_path(p, SymbolKind::State)).collect(),
    )?;
    let defaults: Vec<(String, f64)> = params.into_iter().filter_map(|(p, v)| v.map(|v| (p, v))).collect();
    Ok(block.with_defaults(defaults)?)
}

impl IOBlock {
    /// Serializes to the form read by [`parse_block`].
    pub fn to_text(&self) -> String {
        let mut s = format!("block {}\n", self.name());
        let join = |v: &[Symbol]| v.iter().map(Symbol::path).collect::<Vec<_>>().join(" ");
        if !self.inputs().is_empty() {
            s += &format!("input {}\n", join(self.inputs()));
        }
        if !self.outputs().is_empty() {
            s += &format!("output {}\n", join(self.outputs()));
        }
        for p in self.params() {
            match self.defaults().get(&p) {
                Some(v) => s += &format!("param {} = {v:?}\n", p.path()),
                None => s += &format!("param {}\n", p.path()),
            }
        }
        for eq in self.equations() {
            let rhs = eq.rhs.to_prefix();
            match (eq.kind, &eq.lhs) {
                (EquationKind::Differential, Some(x)) => s += &format!("diff {} = {rhs}\n", x.path()),
                (EquationKind::Algebraic, Some(x)) => s += &format!("alg {} = {rhs}\n", x.path()),
                _ => s += &format!("constraint {rhs}\n"),
            }
        }
        s + "end\n"
    }
}
