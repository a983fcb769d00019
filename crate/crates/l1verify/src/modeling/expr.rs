//! Expression DSL: AST, recursive-descent parser, canonical printer and
//! symbolic differentiation with constant folding.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr   := ['-'] term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ['^' ['-'] integer]
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! A leading minus applies to the whole first term, so `-rho*x2` parses as
//! `Neg(Mul(rho, x2))`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Unary functions accepted by the DSL. `Sign` is internal: it only appears
/// as the derivative of `abs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Abs,
    Sign,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    /// `Sign` returns NaN at 0: the derivative of `abs` does not exist there.
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Abs => v.abs(),
            Func::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    f64::NAN
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Param(Arc<str>),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("undeclared symbol `{name}` at offset {offset}")]
    Undeclared { offset: usize, name: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::Undeclared { offset, .. } => *offset,
        }
    }
}

/// Names the parser may resolve: variables map to `Var(index)`, parameters
/// stay symbolic until bound.
#[derive(Debug, Clone, Default)]
pub struct Symbols {
    pub vars: Vec<String>,
    pub params: Vec<String>,
}

impl Symbols {
    /// State variables `x1..xn` plus the given parameter names.
    pub fn state(n: usize, params: impl IntoIterator<Item = String>) -> Symbols {
        Symbols {
            vars: (1..=n).map(|i| format!("x{i}")).collect(),
            params: params.into_iter().collect(),
        }
    }

    /// Cotangent variables `x1..xn, p1..pn`.
    pub fn cotangent(n: usize) -> Symbols {
        let mut vars: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        vars.extend((1..=n).map(|i| format!("p{i}")));
        Symbols { vars, params: Vec::new() }
    }
}

// ---------------------------------------------------------------- smart constructors

pub fn cst(c: f64) -> Expr {
    Expr::Const(c)
}

pub fn var(i: usize) -> Expr {
    Expr::Var(i)
}

impl Expr {
    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }
}

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => match b {
            Expr::Neg(inner) => Expr::Sub(Box::new(a), inner),
            b => Expr::Add(Box::new(a), Box::new(b)),
        },
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => match b {
            Expr::Neg(inner) => Expr::Add(Box::new(a), inner),
            b => Expr::Sub(Box::new(a), Box::new(b)),
        },
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    if a.is_zero() || b.is_zero() {
        return Expr::Const(0.0);
    }
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        (Some(x), _) if x == -1.0 => neg(b),
        (_, Some(y)) if y == -1.0 => neg(a),
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    if a.is_zero() {
        return Expr::Const(0.0);
    }
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

pub fn powi(a: Expr, k: i32) -> Expr {
    match (a.as_const(), k) {
        (_, 0) => Expr::Const(1.0),
        (_, 1) => a,
        (Some(x), k) => Expr::Const(x.powi(k)),
        _ => Expr::Pow(Box::new(a), k),
    }
}

pub fn call(f: Func, a: Expr) -> Expr {
    if let Some(x) = a.as_const() {
        let v = f.apply(x);
        if v.is_finite() {
            return Expr::Const(v);
        }
    }
    Expr::Call(f, Box::new(a))
}

pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
    terms.into_iter().fold(cst(0.0), add)
}

// ---------------------------------------------------------------- evaluation and rewriting

impl Expr {
    /// Direct tree evaluation. Parameters must already be bound.
    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => vars[*i],
            Expr::Param(_) => f64::NAN,
            Expr::Neg(a) => -a.eval(vars),
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Pow(a, k) => a.eval(vars).powi(*k),
            Expr::Call(f, a) => f.apply(a.eval(vars)),
        }
    }

    /// Replaces every parameter by its value and folds constants.
    pub fn bind(&self, params: &BTreeMap<String, f64>) -> Result<Expr, String> {
        Ok(match self {
            Expr::Const(c) => cst(*c),
            Expr::Var(i) => var(*i),
            Expr::Param(name) => match params.get(name.as_ref()) {
                Some(v) => cst(*v),
                None => return Err(format!("parameter `{name}` has no value")),
            },
            Expr::Neg(a) => neg(a.bind(params)?),
            Expr::Add(a, b) => add(a.bind(params)?, b.bind(params)?),
            Expr::Sub(a, b) => sub(a.bind(params)?, b.bind(params)?),
            Expr::Mul(a, b) => mul(a.bind(params)?, b.bind(params)?),
            Expr::Div(a, b) => div(a.bind(params)?, b.bind(params)?),
            Expr::Pow(a, k) => powi(a.bind(params)?, *k),
            Expr::Call(f, a) => call(*f, a.bind(params)?),
        })
    }

    /// Renumbers variables through `map` (used to embed state expressions in
    /// the cotangent variable space, where the numbering coincides).
    pub fn remap_vars(&self, map: &dyn Fn(usize) -> usize) -> Expr {
        match self {
            Expr::Const(c) => cst(*c),
            Expr::Var(i) => var(map(*i)),
            Expr::Param(p) => Expr::Param(p.clone()),
            Expr::Neg(a) => neg(a.remap_vars(map)),
            Expr::Add(a, b) => add(a.remap_vars(map), b.remap_vars(map)),
            Expr::Sub(a, b) => sub(a.remap_vars(map), b.remap_vars(map)),
            Expr::Mul(a, b) => mul(a.remap_vars(map), b.remap_vars(map)),
            Expr::Div(a, b) => div(a.remap_vars(map), b.remap_vars(map)),
            Expr::Pow(a, k) => powi(a.remap_vars(map), *k),
            Expr::Call(f, a) => call(*f, a.remap_vars(map)),
        }
    }

    pub fn contains_param(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Param(_) => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.contains_param(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.contains_param() || b.contains_param()
            }
        }
    }

    pub fn contains_abs(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Param(_) => false,
            Expr::Call(Func::Abs, _) => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.contains_abs(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.contains_abs() || b.contains_abs()
            }
        }
    }

    /// Symbolic partial derivative with respect to variable `v`.
    ///
    /// `abs(u)` differentiates to `sign(u)*u'`; `sign` evaluates to NaN at 0,
    /// which is how a kink is flagged at evaluation time.
    pub fn diff(&self, v: usize) -> Expr {
        match self {
            Expr::Const(_) | Expr::Param(_) => cst(0.0),
            Expr::Var(i) => cst(if *i == v { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff(v)),
            Expr::Add(a, b) => add(a.diff(v), b.diff(v)),
            Expr::Sub(a, b) => sub(a.diff(v), b.diff(v)),
            Expr::Mul(a, b) => add(
                mul(a.diff(v), (**b).clone()),
                mul((**a).clone(), b.diff(v)),
            ),
            Expr::Div(a, b) => {
                let da = a.diff(v);
                let db = b.diff(v);
                if db.is_zero() {
                    div(da, (**b).clone())
                } else {
                    div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        powi((**b).clone(), 2),
                    )
                }
            }
            Expr::Pow(a, k) => mul(
                mul(cst(*k as f64), powi((**a).clone(), k - 1)),
                a.diff(v),
            ),
            Expr::Call(f, a) => {
                let da = a.diff(v);
                if da.is_zero() {
                    return cst(0.0);
                }
                let u = (**a).clone();
                let outer = match f {
                    Func::Exp => call(Func::Exp, u),
                    Func::Log => div(cst(1.0), u),
                    Func::Sqrt => div(cst(0.5), call(Func::Sqrt, u)),
                    Func::Sin => call(Func::Cos, u),
                    Func::Cos => neg(call(Func::Sin, u)),
                    Func::Abs => call(Func::Sign, u),
                    Func::Sign => cst(0.0),
                };
                mul(outer, da)
            }
        }
    }

    pub fn gradient(&self, nvars: usize) -> Vec<Expr> {
        (0..nvars).map(|v| self.diff(v)).collect()
    }
}

// ---------------------------------------------------------------- parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
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
                let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{}`", src[start..].chars().next().unwrap_or('?')),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    syms: &'a Symbols,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { offset: self.offset(), message: message.into() })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = if *self.peek() == Tok::Minus {
            self.bump();
            negate_literal(self.term()?)
        } else {
            self.term()?
        };
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(negate_literal(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let negative = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match self.peek().clone() {
            Tok::Num(v) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                self.bump();
                let k = v as i32;
                Ok(Expr::Pow(Box::new(base), if negative { -k } else { k }))
            }
            _ => self.error("exponent must be an integer literal"),
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return self.error("expected `)`");
                }
                self.bump();
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    if *self.peek() != Tok::LParen {
                        return self.error(format!("expected `(` after `{name}`"));
                    }
                    self.bump();
                    let arg = self.expr()?;
                    if *self.peek() != Tok::RParen {
                        return self.error("expected `)`");
                    }
                    self.bump();
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                if let Some(i) = self.syms.vars.iter().position(|v| *v == name) {
                    Ok(Expr::Var(i))
                } else if self.syms.params.contains(&name) {
                    Ok(Expr::Param(Arc::from(name.as_str())))
                } else {
                    Err(ParseError::Undeclared { offset, name })
                }
            }
            Tok::End => {
                self.pos = self.toks.len() - 1;
                self.error("unexpected end of input")
            }
            other => {
                self.pos = self.pos.saturating_sub(1);
                self.error(format!("unexpected token {other:?}"))
            }
        }
    }
}

fn negate_literal(e: Expr) -> Expr {
    match e {
        Expr::Const(c) => Expr::Const(-c),
        e => Expr::Neg(Box::new(e)),
    }
}

pub fn parse_expression(src: &str, syms: &Symbols) -> Result<Expr, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError::Syntax { offset: 0, message: "empty expression".into() });
    }
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, syms };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.error("trailing input");
    }
    Ok(e)
}

// ---------------------------------------------------------------- canonical printer

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_POW: u8 = 3;
const PREC_ATOM: u8 = 4;

/// Prints `e` with variable names from `syms`. The output parses back to a
/// structurally identical tree.
pub fn print_expression(e: &Expr, syms: &Symbols) -> String {
    let mut s = String::new();
    write_expr(e, syms, 0, &mut s);
    s
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => PREC_ADD,
        Expr::Const(_) | Expr::Var(_) | Expr::Param(_) | Expr::Call(..) => PREC_ATOM,
        Expr::Neg(_) | Expr::Add(..) | Expr::Sub(..) => PREC_ADD,
        Expr::Mul(..) | Expr::Div(..) => PREC_MUL,
        Expr::Pow(..) => PREC_POW,
    }
}

fn write_expr(e: &Expr, syms: &Symbols, ctx: u8, out: &mut String) {
    let p = prec(e);
    let paren = p < ctx;
    if paren {
        out.push('(');
    }
    match e {
        Expr::Const(c) => out.push_str(&format_number(*c)),
        Expr::Var(i) => match syms.vars.get(*i) {
            Some(name) => out.push_str(name),
            None => out.push_str(&format!("v{i}")),
        },
        Expr::Param(name) => out.push_str(name),
        Expr::Neg(a) => {
            out.push('-');
            // A negated negative literal needs parentheses to stay a Neg node.
            let inner = if matches!(**a, Expr::Const(c) if c < 0.0) { PREC_ATOM } else { PREC_MUL };
            write_expr(a, syms, inner, out);
        }
        Expr::Add(a, b) => {
            write_expr(a, syms, PREC_ADD, out);
            out.push_str(" + ");
            write_expr(b, syms, PREC_ADD + 1, out);
        }
        Expr::Sub(a, b) => {
            write_expr(a, syms, PREC_ADD, out);
            out.push_str(" - ");
            write_expr(b, syms, PREC_ADD + 1, out);
        }
        Expr::Mul(a, b) => {
            write_expr(a, syms, PREC_MUL, out);
            out.push('*');
            write_expr(b, syms, PREC_MUL + 1, out);
        }
        Expr::Div(a, b) => {
            write_expr(a, syms, PREC_MUL, out);
            out.push('/');
            write_expr(b, syms, PREC_MUL + 1, out);
        }
        Expr::Pow(a, k) => {
            write_expr(a, syms, PREC_ATOM, out);
            out.push('^');
            out.push_str(&k.to_string());
        }
        Expr::Call(f, a) => {
            out.push_str(f.name());
            out.push('(');
            write_expr(a, syms, 0, out);
            out.push(')');
        }
    }
    if paren {
        out.push(')');
    }
}

fn format_number(c: f64) -> String {
    // `{:?}` is the shortest representation that round-trips.
    let s = format!("{c:?}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_expression(self, &Symbols::default()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syms() -> Symbols {
        Symbols::state(2, ["rho".to_string()])
    }

    #[test]
    fn single_variable() {
        assert_eq!(parse_expression("x2", &syms()).unwrap(), Expr::Var(1));
    }

    #[test]
    fn leading_minus_wraps_the_product() {
        let e = parse_expression("-rho*x2", &syms()).unwrap();
        let expected = Expr::Neg(Box::new(Expr::Mul(
            Box::new(Expr::Param(Arc::from("rho"))),
            Box::new(Expr::Var(1)),
        )));
        assert_eq!(e, expected);
        assert_eq!(print_expression(&e, &syms()), "-rho*x2");
    }

    #[test]
    fn incomplete_input_reports_offset() {
        let err = parse_expression("x2 +", &syms()).unwrap_err();
        assert_eq!(err.offset(), 4);
    }

    #[test]
    fn undeclared_symbol() {
        let err = parse_expression("x1 + y", &syms()).unwrap_err();
        assert!(matches!(err, ParseError::Undeclared { offset: 5, .. }));
    }

    #[test]
    fn derivative_of_linear_and_power() {
        let s = syms();
        let e = parse_expression("-rho*x2", &s).unwrap();
        assert_eq!(print_expression(&e.diff(1), &s), "-rho");
        let e = parse_expression("x2^2", &s).unwrap();
        assert_eq!(print_expression(&e.diff(1), &s), "2*x2");
    }

    #[test]
    fn derivative_of_exp_product_matches_value() {
        let s = syms();
        let e = parse_expression("exp(x1*x2)", &s).unwrap();
        let d = e.diff(0);
        let v = d.eval(&[1.0, 2.0]);
        assert!((v - 2.0 * 2f64.exp()).abs() < 1e-12);
        assert!((v - 14.778112).abs() < 1e-6);
    }

    #[test]
    fn abs_derivative_is_nan_at_kink() {
        let s = syms();
        let e = parse_expression("abs(x1)", &s).unwrap();
        let d = e.diff(0);
        assert!(d.eval(&[0.0, 0.0]).is_nan());
        assert_eq!(d.eval(&[-3.0, 0.0]), -1.0);
    }

    #[test]
    fn binding_folds_constants() {
        let s = syms();
        let e = parse_expression("rho*rho + x1*0", &s).unwrap();
        let mut params = BTreeMap::new();
        params.insert("rho".to_string(), 3.0);
        assert_eq!(e.bind(&params).unwrap(), Expr::Const(9.0));
        assert!(e.bind(&BTreeMap::new()).is_err());
    }

    #[test]
    fn printer_round_trips_awkward_shapes() {
        let s = syms();
        for src in [
            "x1 - (x2 - x1)",
            "x1/(x2*x1)",
            "-(x1 + x2)*x2",
            "x1*(-x2)",
            "(-2)*x1",
            "x1^-3 + sin(-x2)",
            "-x1^2",
            "1e-20 + 3.5e10*x1",
            "--x1",
            "-(-2)",
        ] {
            let e = parse_expression(src, &s).unwrap();
            let printed = print_expression(&e, &s);
            let again = parse_expression(&printed, &s).unwrap();
            assert_eq!(e, again, "{src} -> {printed}");
        }
    }
}
