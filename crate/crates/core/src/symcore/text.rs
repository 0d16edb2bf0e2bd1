//! Canonical prefix serialization.
//!
//! ```text
//! (* (^ M -1.0) (+ P_m (neg (* D omega)) (neg P_e)))
//! ```
//!
//! Heads are `+`, `*`, `^`, `neg`, `dt` and the function names. Symbols are
//! written as dotted paths; constants use Rust's shortest round-trip float
//! formatting, with `#inf`, `#-inf` and `#nan` for non-finite values.

use thiserror::Error;

use super::{Expr, Func, Node, Symbol, SymbolKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected token `{0}` at byte {1}")]
    UnexpectedToken(String, usize),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("operator `{0}` expects {1} argument(s), got {2}")]
    Arity(String, usize, usize),
    #[error("bad number `{0}`")]
    BadNumber(String),
}

impl Expr {
    pub fn to_prefix(&self) -> String {
        let mut s = String::new();
        write_prefix(self, &mut s);
        s
    }
}

fn write_const(v: f64, out: &mut String) {
    if v.is_nan() {
        out.push_str("#nan");
    } else if v == f64::INFINITY {
        out.push_str("#inf");
    } else if v == f64::NEG_INFINITY {
        out.push_str("#-inf");
    } else {
        out.push_str(&format!("{v:?}"));
    }
}

fn write_prefix(e: &Expr, out: &mut String) {
    let (head, args): (&str, Vec<&Expr>) = match e.node() {
        Node::Const(v) => return write_const(*v, out),
        Node::Var(s) => return out.push_str(&s.path()),
        Node::Add(xs) => ("+", xs.iter().collect()),
        Node::Mul(xs) => ("*", xs.iter().collect()),
        Node::Pow(a, b) => ("^", vec![a, b]),
        Node::Neg(a) => ("neg", vec![a]),
        Node::Call(f, a) => (f.name(), vec![a]),
        Node::Dt(a) => ("dt", vec![a]),
    };
    out.push('(');
    out.push_str(head);
    for a in args {
        out.push(' ');
        write_prefix(a, out);
    }
    out.push(')');
}

#[derive(Debug, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(src: &str) -> Vec<(Tok<'_>, usize)> {
    let mut toks = Vec::new();
    let mut start = None;
    for (i, c) in src.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                toks.push((Tok::Atom(&src[s..i]), s));
            }
            if c == '(' {
                toks.push((Tok::Open, i));
            } else if c == ')' {
                toks.push((Tok::Close, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        toks.push((Tok::Atom(&src[s..]), s));
    }
    toks
}

/// Parses the prefix form. `kind_of` assigns a kind to each symbol path.
/// Nodes are built verbatim so that `parse(print(e)) == e`.
pub fn parse_expr(src: &str, kind_of: &dyn Fn(&str) -> SymbolKind) -> Result<Expr, ParseError> {
    let toks = tokenize(src);
    let mut pos = 0;
    let e = parse_at(&toks, &mut pos, kind_of)?;
    if let Some((t, at)) = toks.get(pos) {
        return Err(ParseError::UnexpectedToken(format!("{t:?}"), *at));
    }
    Ok(e)
}

fn is_number_start(a: &str) -> bool {
    let mut cs = a.chars();
    match cs.next() {
        Some(c) if c.is_ascii_digit() || c == '#' => true,
        Some('-') | Some('+') | Some('.') => {
            cs.next().map(|c| c.is_ascii_digit() || c == '.').unwrap_or(false)
        }
        _ => false,
    }
}

fn parse_atom(a: &str, kind_of: &dyn Fn(&str) -> SymbolKind) -> Result<Expr, ParseError> {
    if is_number_start(a) {
        let v = match a {
            "#nan" => f64::NAN,
            "#inf" => f64::INFINITY,
            "#-inf" => f64::NEG_INFINITY,
            _ => a.parse::<f64>().map_err(|_| ParseError::BadNumber(a.to_owned()))?,
        };
        Ok(Expr::from_node(Node::Const(v)))
    } else {
        Ok(Expr::from_node(Node::Var(Symbol::from_path(a, kind_of(a)))))
    }
}

fn parse_at(
    toks: &[(Tok<'_>, usize)],
    pos: &mut usize,
    kind_of: &dyn Fn(&str) -> SymbolKind,
) -> Result<Expr, ParseError> {
    let (tok, at) = toks.get(*pos).ok_or(ParseError::UnexpectedEnd)?;
    *pos += 1;
    match tok {
        Tok::Atom(a) => parse_atom(a, kind_of),
        Tok::Close => Err(ParseError::UnexpectedToken(")".into(), *at)),
        Tok::Open => {
            let head = match toks.get(*pos) {
                Some((Tok::Atom(h), _)) => *h,
                Some((t, at)) => return Err(ParseError::UnexpectedToken(format!("{t:?}"), *at)),
                None => return Err(ParseError::UnexpectedEnd),
            };
            *pos += 1;
            let mut args = Vec::new();
            loop {
                match toks.get(*pos) {
                    Some((Tok::Close, _)) => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => args.push(parse_at(toks, pos, kind_of)?),
                    None => return Err(ParseError::UnexpectedEnd),
                }
            }
            build(head, args)
        }
    }
}

fn build(head: &str, mut args: Vec<Expr>) -> Result<Expr, ParseError> {
    let arity = |n: usize, args: &Vec<Expr>| {
        if args.len() == n {
            Ok(())
        } else {
            Err(ParseError::Arity(head.to_owned(), n, args.len()))
        }
    };
    let node = match head {
        "+" | "*" => {
            if args.is_empty() {
                return Err(ParseError::Arity(head.to_owned(), 1, 0));
            }
            if head == "+" {
                Node::Add(args)
            } else {
                Node::Mul(args)
            }
        }
        "^" => {
            arity(2, &args)?;
            let e = args.pop().unwrap();
            Node::Pow(args.pop().unwrap(), e)
        }
        "neg" => {
            arity(1, &args)?;
            Node::Neg(args.pop().unwrap())
        }
        "dt" => {
            arity(1, &args)?;
            Node::Dt(args.pop().unwrap())
        }
        _ => {
            let f = Func::from_name(head).ok_or_else(|| ParseError::UnknownOperator(head.to_owned()))?;
            arity(1, &args)?;
            Node::Call(f, args.pop().unwrap())
        }
    };
    Ok(Expr::from_node(node))
}
