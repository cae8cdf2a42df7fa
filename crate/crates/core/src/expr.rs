//! Arithmetic rate expressions.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          right associative
//! atom   := number | ident | '(' expr ')'
//! ```
//!
//! A [`RateExpr`] is the symbolic tree. Before evaluation it is lowered into a
//! [`CompiledExpr`] with variables resolved to slot indices and parameters
//! substituted and constant-folded.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

const PREC_NEG: u8 = 3;
const PREC_ATOM: u8 = 5;

/// Expression tree. Constants produced by the parser are always finite and
/// non-negative; negation is an explicit node.
#[derive(Debug, Clone, PartialEq)]
pub enum RateExpr {
    Const(f64),
    Symbol(String),
    Neg(Box<RateExpr>),
    Binary(BinOp, Box<RateExpr>, Box<RateExpr>),
}

impl RateExpr {
    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).parse()
    }

    pub fn constant(v: f64) -> Self {
        assert!(v.is_finite() && v >= 0.0, "constants must be finite and non-negative");
        RateExpr::Const(v)
    }

    pub fn symbol(name: impl Into<String>) -> Self {
        RateExpr::Symbol(name.into())
    }

    pub fn binary(op: BinOp, lhs: RateExpr, rhs: RateExpr) -> Self {
        RateExpr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// All symbols referenced, sorted.
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self {
            RateExpr::Const(_) => {}
            RateExpr::Symbol(s) => {
                out.insert(s.clone());
            }
            RateExpr::Neg(e) => e.collect_symbols(out),
            RateExpr::Binary(_, a, b) => {
                a.collect_symbols(out);
                b.collect_symbols(out);
            }
        }
    }

    /// Replace symbols by expressions; symbols for which `f` returns `None`
    /// are kept.
    pub fn substitute(&self, f: &impl Fn(&str) -> Option<RateExpr>) -> RateExpr {
        match self {
            RateExpr::Const(v) => RateExpr::Const(*v),
            RateExpr::Symbol(s) => f(s).unwrap_or_else(|| RateExpr::Symbol(s.clone())),
            RateExpr::Neg(e) => RateExpr::Neg(Box::new(e.substitute(f))),
            RateExpr::Binary(op, a, b) => {
                RateExpr::Binary(*op, Box::new(a.substitute(f)), Box::new(b.substitute(f)))
            }
        }
    }

    /// Build `Σ coef_k · sym_k` with explicit subtraction for negative
    /// coefficients. Zero coefficients are skipped; an empty sum is `0`.
    pub fn linear_combination(terms: &[(f64, RateExpr)]) -> RateExpr {
        let mut acc: Option<RateExpr> = None;
        for (coef, term) in terms {
            if *coef == 0.0 {
                continue;
            }
            let mag = coef.abs();
            let scaled = if mag == 1.0 {
                term.clone()
            } else {
                RateExpr::binary(BinOp::Mul, RateExpr::constant(mag), term.clone())
            };
            acc = Some(match acc {
                None if *coef < 0.0 => RateExpr::Neg(Box::new(scaled)),
                None => scaled,
                Some(prev) if *coef < 0.0 => RateExpr::binary(BinOp::Sub, prev, scaled),
                Some(prev) => RateExpr::binary(BinOp::Add, prev, scaled),
            });
        }
        acc.unwrap_or(RateExpr::Const(0.0))
    }

    fn precedence(&self) -> u8 {
        match self {
            RateExpr::Const(_) | RateExpr::Symbol(_) => PREC_ATOM,
            RateExpr::Neg(_) => PREC_NEG,
            RateExpr::Binary(op, _, _) => op.precedence(),
        }
    }

    /// Lower to an evaluable form. `resolve` maps a symbol to a variable slot
    /// or a parameter value; unknown symbols are an error.
    pub fn compile(&self, resolve: &impl Fn(&str) -> Option<Slot>) -> Result<CompiledExpr> {
        Ok(CompiledExpr::from_node(&self.lower(resolve)?))
    }

    fn lower(&self, resolve: &impl Fn(&str) -> Option<Slot>) -> Result<Node> {
        Ok(match self {
            RateExpr::Const(v) => Node::Const(*v),
            RateExpr::Symbol(s) => match resolve(s) {
                Some(Slot::Var(i)) => Node::Var(i),
                Some(Slot::Value(v)) => Node::Const(v),
                None => {
                    return Err(Error::UnknownSymbol {
                        symbol: s.clone(),
                        context: format!("expression `{self}`"),
                    })
                }
            },
            RateExpr::Neg(e) => match e.lower(resolve)? {
                Node::Const(v) => Node::Const(-v),
                n => Node::Neg(Box::new(n)),
            },
            RateExpr::Binary(op, a, b) => fold(*op, a.lower(resolve)?, b.lower(resolve)?),
        })
    }
}

fn fold(op: BinOp, a: Node, b: Node) -> Node {
    if let (Node::Const(x), Node::Const(y)) = (&a, &b) {
        if let Ok(v) = apply(op, *x, *y) {
            if v.is_finite() {
                return Node::Const(v);
            }
        }
    }
    if op == BinOp::Pow {
        if let Node::Const(e) = b {
            if e.fract() == 0.0 && e.abs() <= 64.0 {
                return Node::Powi(Box::new(a), e as i32);
            }
        }
    }
    Node::Bin(op, Box::new(a), Box::new(b))
}

fn apply(op: BinOp, x: f64, y: f64) -> std::result::Result<f64, &'static str> {
    match op {
        BinOp::Add => Ok(x + y),
        BinOp::Sub => Ok(x - y),
        BinOp::Mul => Ok(x * y),
        BinOp::Div => {
            if y == 0.0 {
                Err("division by zero")
            } else {
                Ok(x / y)
            }
        }
        BinOp::Pow => {
            if x == 0.0 && y < 0.0 {
                Err("zero raised to a negative power")
            } else {
                Ok(x.powf(y))
            }
        }
    }
}

impl fmt::Display for RateExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateExpr::Const(v) => write!(f, "{v}"),
            RateExpr::Symbol(s) => f.write_str(s),
            RateExpr::Neg(e) => {
                f.write_str("-")?;
                write_child(f, e, e.precedence() < PREC_NEG)
            }
            RateExpr::Binary(op, a, b) => {
                let p = op.precedence();
                let (left_parens, right_parens) = if *op == BinOp::Pow {
                    (a.precedence() <= p, b.precedence() < PREC_NEG)
                } else {
                    (a.precedence() < p, b.precedence() <= p)
                };
                write_child(f, a, left_parens)?;
                if *op == BinOp::Pow {
                    f.write_str("^")?;
                } else {
                    write!(f, " {} ", op.symbol())?;
                }
                write_child(f, b, right_parens)
            }
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &RateExpr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            toks: Vec::new(),
            at: 0,
        }
    }

    fn parse(mut self) -> Result<RateExpr> {
        self.toks = lex(self.src)?;
        let e = self.expr()?;
        match self.peek() {
            Tok::End => Ok(e),
            t => Err(self.error(format!("unexpected {}", describe(t)))),
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error(&self, msg: String) -> Error {
        Error::Syntax {
            pos: self.toks[self.at].1 + 1,
            msg,
        }
    }

    fn expr(&mut self) -> Result<RateExpr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = RateExpr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<RateExpr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = RateExpr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<RateExpr> {
        if self.peek() == &Tok::Op('-') {
            self.bump();
            return Ok(RateExpr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<RateExpr> {
        let base = self.atom()?;
        if self.peek() == &Tok::Op('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(RateExpr::binary(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<RateExpr> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(RateExpr::Const(v))
            }
            Tok::Ident(s) => {
                self.bump();
                Ok(RateExpr::Symbol(s))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                if self.peek() != &Tok::RParen {
                    return Err(self.error(format!("expected `)`, found {}", describe(self.peek()))));
                }
                self.bump();
                Ok(e)
            }
            t => Err(self.error(format!("expected an operand, found {}", describe(&t)))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Op(c) => format!("`{c}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::End => "end of input".into(),
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((Tok::Op(c as char), i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| Error::Syntax {
                    pos: start + 1,
                    msg: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(v), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(Error::Syntax {
                    pos: i + 1,
                    msg: format!("unexpected character `{ch}`"),
                });
            }
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Compiled form

/// What a symbol resolves to when compiling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    Var(usize),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Powi(Box<Node>, i32),
    Bin(BinOp, Box<Node>, Box<Node>),
}

impl Node {
    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Node::Const(_) => {}
            Node::Var(i) => {
                out.insert(*i);
            }
            Node::Neg(e) | Node::Powi(e, _) => e.collect_vars(out),
            Node::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }
}

/// Anything that can supply variable values by slot index.
pub trait VarSource {
    fn var(&self, i: usize) -> f64;
}

impl VarSource for [f64] {
    #[inline]
    fn var(&self, i: usize) -> f64 {
        self[i]
    }
}

impl VarSource for [i64] {
    #[inline]
    fn var(&self, i: usize) -> f64 {
        self[i] as f64
    }
}

/// Postfix instruction of a compiled expression.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Powi(i32),
    Bin(BinOp),
}

fn emit(node: &Node, code: &mut Vec<Op>, depth: usize, max_depth: &mut usize) {
    *max_depth = (*max_depth).max(depth + 1);
    match node {
        Node::Const(v) => code.push(Op::Const(*v)),
        Node::Var(i) => code.push(Op::Var(*i)),
        Node::Neg(e) => {
            emit(e, code, depth, max_depth);
            code.push(Op::Neg);
        }
        Node::Powi(e, k) => {
            emit(e, code, depth, max_depth);
            code.push(Op::Powi(*k));
        }
        Node::Bin(op, a, b) => {
            emit(a, code, depth, max_depth);
            emit(b, code, depth + 1, max_depth);
            code.push(Op::Bin(*op));
        }
    }
}

const INLINE_STACK: usize = 16;

/// A rate expression with parameters folded in and variables resolved,
/// stored as postfix code.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    code: Vec<Op>,
    depth: usize,
    vars: Vec<usize>,
}

impl CompiledExpr {
    fn from_node(root: &Node) -> Self {
        let mut vars = BTreeSet::new();
        root.collect_vars(&mut vars);
        let mut code = Vec::new();
        let mut depth = 0;
        emit(root, &mut code, 0, &mut depth);
        CompiledExpr {
            code,
            depth,
            vars: vars.into_iter().collect(),
        }
    }

    /// Evaluate; division by zero, `0^negative` and non-finite results are
    /// errors.
    #[inline]
    pub fn eval<V: VarSource + ?Sized>(&self, vars: &V) -> std::result::Result<f64, &'static str> {
        let v = if self.depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            self.run(vars, &mut stack)?
        } else {
            let mut stack = vec![0.0f64; self.depth];
            self.run(vars, &mut stack)?
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err("non-finite result")
        }
    }

    #[inline]
    fn run<V: VarSource + ?Sized>(&self, vars: &V, stack: &mut [f64]) -> std::result::Result<f64, &'static str> {
        let mut sp = 0;
        for op in &self.code {
            match *op {
                Op::Const(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::Var(i) => {
                    stack[sp] = vars.var(i);
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Powi(k) => {
                    let b = stack[sp - 1];
                    if b == 0.0 && k < 0 {
                        return Err("zero raised to a negative power");
                    }
                    stack[sp - 1] = b.powi(k);
                }
                Op::Bin(op) => {
                    sp -= 1;
                    stack[sp - 1] = apply(op, stack[sp - 1], stack[sp])?;
                }
            }
        }
        Ok(stack[0])
    }

    /// Variable slots the expression reads, sorted.
    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.code.as_slice(), [Op::Const(_)])
    }
}
