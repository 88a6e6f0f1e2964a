//! A small arithmetic expression language for coefficient fields.
//!
//! Expressions range over slow variables `x1..x3`, fast variables `y1..y3`,
//! gradient components `p1..p3` and `pnorm` (the Euclidean norm of `p`),
//! the literal `pi`, the operators `+ - * / ^` and the functions
//! `sin cos exp abs min max floor sqrt log`.
//!
//! ```
//! use halfcell::dsl::{parse, Env};
//!
//! let e = parse("1 + 0.5*sin(2*pi*y1)").unwrap();
//! let v = e.eval(&Env::new().with_y(&[0.25])).unwrap();
//! assert!((v - 1.5).abs() < 1e-15);
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Maximum index accepted for `x`, `y` and `p` variables.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    X(u8),
    Y(u8),
    P(u8),
    PNorm,
}

impl Var {
    fn from_name(name: &str) -> Option<Var> {
        if name == "pnorm" {
            return Some(Var::PNorm);
        }
        let (head, tail) = name.split_at(1);
        let idx: usize = tail.parse().ok()?;
        if idx == 0 || idx > MAX_DIM || tail.starts_with('0') {
            return None;
        }
        let i = (idx - 1) as u8;
        match head {
            "x" => Some(Var::X(i)),
            "y" => Some(Var::Y(i)),
            "p" => Some(Var::P(i)),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Var::X(i) => format!("x{}", i + 1),
            Var::Y(i) => format!("y{}", i + 1),
            Var::P(i) => format!("p{}", i + 1),
            Var::PNorm => "pnorm".to_string(),
        }
    }

    fn slot(&self) -> usize {
        match self {
            Var::X(i) => *i as usize,
            Var::Y(i) => MAX_DIM + *i as usize,
            Var::P(i) => 2 * MAX_DIM + *i as usize,
            Var::PNorm => 3 * MAX_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Floor,
    Sqrt,
    Log,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "floor" => Func::Floor,
            "sqrt" => Func::Sqrt,
            "log" => Func::Log,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Floor => "floor",
            Func::Sqrt => "sqrt",
            Func::Log => "log",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Pi,
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression. Immutable and cheap to share.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown identifier `{name}` at line {line}, column {col}")]
    UnknownIdentifier { name: String, line: usize, col: usize },
    #[error("function `{name}` takes {expected} argument(s), got {got} (line {line}, column {col})")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
        line: usize,
        col: usize,
    },
}

impl ParseError {
    /// 1-based (line, column) of the error.
    pub fn position(&self) -> (usize, usize) {
        match self {
            ParseError::Syntax { line, col, .. }
            | ParseError::UnknownIdentifier { line, col, .. }
            | ParseError::Arity { line, col, .. } => (*line, *col),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("{0} outside its domain")]
    Domain(&'static str),
}

/// Variable bindings for fast evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Env {
    vals: [f64; 3 * MAX_DIM + 1],
    bound: u16,
}

impl Default for Env {
    fn default() -> Self {
        Self::new()
    }
}

impl Env {
    pub fn new() -> Self {
        Env {
            vals: [0.0; 3 * MAX_DIM + 1],
            bound: 0,
        }
    }

    pub fn set(&mut self, v: Var, value: f64) {
        let s = v.slot();
        self.vals[s] = value;
        self.bound |= 1 << s;
    }

    pub fn set_x(&mut self, x: &[f64]) {
        for (i, &v) in x.iter().enumerate().take(MAX_DIM) {
            self.set(Var::X(i as u8), v);
        }
    }

    pub fn set_y(&mut self, y: &[f64]) {
        for (i, &v) in y.iter().enumerate().take(MAX_DIM) {
            self.set(Var::Y(i as u8), v);
        }
    }

    /// Binds `p1..pN` and `pnorm`.
    pub fn set_p(&mut self, p: &[f64]) {
        let mut n2 = 0.0;
        for (i, &v) in p.iter().enumerate().take(MAX_DIM) {
            self.set(Var::P(i as u8), v);
            n2 += v * v;
        }
        self.set(Var::PNorm, n2.sqrt());
    }

    pub fn with_x(mut self, x: &[f64]) -> Self {
        self.set_x(x);
        self
    }

    pub fn with_y(mut self, y: &[f64]) -> Self {
        self.set_y(y);
        self
    }

    pub fn with_p(mut self, p: &[f64]) -> Self {
        self.set_p(p);
        self
    }

    fn get(&self, v: Var) -> Result<f64, EvalError> {
        let s = v.slot();
        if self.bound & (1 << s) == 0 {
            return Err(EvalError::Unbound(v.name()));
        }
        Ok(self.vals[s])
    }
}

/// Parses an expression.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let tokens = lex(source)?;
    let mut p = Parser { tokens, pos: 0 };
    let root = p.expr(0)?;
    let t = p.peek();
    if t.kind != Tok::Eof {
        return Err(ParseError::Syntax {
            line: t.line,
            col: t.col,
            msg: format!("unexpected {}", t.kind.describe()),
        });
    }
    Ok(Expr {
        root,
        source: source.to_string(),
    })
}

/// Evaluates `e` with named bindings such as `"y1" -> 0.25`.
pub fn evaluate(e: &Expr, bindings: &HashMap<String, f64>) -> Result<f64, EvalError> {
    let mut env = Env::new();
    for (name, &value) in bindings {
        if let Some(v) = Var::from_name(name) {
            env.set(v, value);
        }
    }
    e.eval(&env)
}

impl Expr {
    /// The constant expression `c`.
    pub fn constant(c: f64) -> Expr {
        Expr {
            root: Node::Num(c),
            source: format!("{c:?}"),
        }
    }

    /// The source text this expression was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, env: &Env) -> Result<f64, EvalError> {
        eval_node(&self.root, env)
    }

    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        collect_vars(&self.root, &mut out);
        out
    }

    pub fn depends_on_x(&self) -> bool {
        self.free_vars().iter().any(|v| matches!(v, Var::X(_)))
    }

    pub fn depends_on_y(&self) -> bool {
        self.free_vars().iter().any(|v| matches!(v, Var::Y(_)))
    }

    pub fn depends_on_p(&self) -> bool {
        self.free_vars()
            .iter()
            .any(|v| matches!(v, Var::P(_) | Var::PNorm))
    }

    /// The value of a closed expression, if it has no free variables.
    pub fn as_constant(&self) -> Option<f64> {
        if self.free_vars().is_empty() {
            self.eval(&Env::new()).ok()
        } else {
            None
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Largest `|e(y) - e(y + e_k)|` over random probes and unit vectors `e_k`,
/// `k < dim`. Other variables are bound to random values shared by both sides.
pub fn periodicity_defect(e: &Expr, dim: usize, probes: usize, seed: u64) -> Result<f64, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let mut env = Env::new();
        let x: Vec<f64> = (0..MAX_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..MAX_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p: Vec<f64> = (0..MAX_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect();
        env.set_x(&x);
        env.set_p(&p);
        env.set_y(&y);
        let base = e.eval(&env)?;
        for k in 0..dim {
            let mut shifted = y.clone();
            shifted[k] += 1.0;
            env.set_y(&shifted);
            worst = worst.max((e.eval(&env)? - base).abs());
        }
    }
    Ok(worst)
}

fn eval_node(n: &Node, env: &Env) -> Result<f64, EvalError> {
    Ok(match n {
        Node::Num(v) => *v,
        Node::Pi => std::f64::consts::PI,
        Node::Var(v) => env.get(*v)?,
        Node::Neg(a) => -eval_node(a, env)?,
        Node::Bin(op, a, b) => {
            let a = eval_node(a, env)?;
            let b = eval_node(b, env)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    a / b
                }
                BinOp::Pow => {
                    if a == 0.0 && b < 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    let r = a.powf(b);
                    if r.is_nan() && !a.is_nan() && !b.is_nan() {
                        return Err(EvalError::Domain("power"));
                    }
                    r
                }
            }
        }
        Node::Call(func, args) => {
            let a = eval_node(&args[0], env)?;
            match func {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Abs => a.abs(),
                Func::Floor => a.floor(),
                Func::Sqrt => {
                    if a < 0.0 {
                        return Err(EvalError::Domain("sqrt argument"));
                    }
                    a.sqrt()
                }
                Func::Log => {
                    if a <= 0.0 {
                        return Err(EvalError::Domain("log argument"));
                    }
                    a.ln()
                }
                Func::Min => a.min(eval_node(&args[1], env)?),
                Func::Max => a.max(eval_node(&args[1], env)?),
            }
        }
    })
}

fn collect_vars(n: &Node, out: &mut BTreeSet<Var>) {
    match n {
        Node::Num(_) | Node::Pi => {}
        Node::Var(v) => {
            out.insert(*v);
        }
        Node::Neg(a) => collect_vars(a, out),
        Node::Bin(_, a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
        Node::Call(_, args) => args.iter().for_each(|a| collect_vars(a, out)),
    }
}

fn write_node(n: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match n {
        Node::Num(v) => {
            if *v < 0.0 {
                write!(f, "({v:?})")
            } else {
                write!(f, "{v:?}")
            }
        }
        Node::Pi => write!(f, "pi"),
        Node::Var(v) => write!(f, "{}", v.name()),
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, f)?;
            write!(f, ")")
        }
        Node::Bin(op, a, b) => {
            write!(f, "(")?;
            write_node(a, f)?;
            write!(f, " {} ", op.symbol())?;
            write_node(b, f)?;
            write!(f, ")")
        }
        Node::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write_node(a, f)?;
            }
            write!(f, ")")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Op(c) => format!("operator `{c}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            col += 1;
            i += 1;
            continue;
        }
        let start = i;
        let kind = if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                line: tl,
                col: tc,
                msg: format!("malformed number `{text}`"),
            })?;
            Tok::Num(v)
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else {
            i += 1;
            match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => {
                    return Err(ParseError::Syntax {
                        line: tl,
                        col: tc,
                        msg: format!("unexpected character `{c}`"),
                    })
                }
            }
        };
        col += i - start;
        out.push(Token {
            kind,
            line: tl,
            col: tc,
        });
    }
    out.push(Token {
        kind: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

const UNARY_PREC: u8 = 3;

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, t: &Token, msg: String) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            line: t.line,
            col: t.col,
            msg,
        })
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        let t = self.next();
        if t.kind == want {
            Ok(())
        } else {
            self.syntax(&t, format!("expected {}, found {}", want.describe(), t.kind.describe()))
        }
    }

    /// Precedence climbing: `+ -` bind at 1, `* /` at 2, unary minus at 3
    /// and right-associative `^` at 4.
    fn expr(&mut self, min_prec: u8) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().kind {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                Tok::Op('^') => BinOp::Pow,
                _ => break,
            };
            let (prec, right) = match op {
                BinOp::Add | BinOp::Sub => (1, false),
                BinOp::Mul | BinOp::Div => (2, false),
                BinOp::Pow => (4, true),
            };
            if prec < min_prec {
                break;
            }
            self.next();
            let rhs = if op == BinOp::Pow {
                self.power_rhs()?
            } else {
                self.expr(if right { prec } else { prec + 1 })?
            };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    /// The right operand of `^` may carry its own unary minus (`2^-1`).
    fn power_rhs(&mut self) -> Result<Node, ParseError> {
        if self.peek().kind == Tok::Op('-') {
            self.next();
            let inner = self.power_rhs()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        let base = self.primary()?;
        if self.peek().kind == Tok::Op('^') {
            self.next();
            let rhs = self.power_rhs()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(rhs)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        match self.peek().kind {
            Tok::Op('-') => {
                self.next();
                let inner = self.expr(UNARY_PREC)?;
                Ok(Node::Neg(Box::new(inner)))
            }
            Tok::Op('+') => {
                self.next();
                self.expr(UNARY_PREC)
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let t = self.next();
        match &t.kind {
            Tok::Num(v) => Ok(Node::Num(*v)),
            Tok::LParen => {
                let inner = self.expr(0)?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if self.peek().kind == Tok::LParen {
                    let func = Func::from_name(name).ok_or_else(|| ParseError::UnknownIdentifier {
                        name: name.clone(),
                        line: t.line,
                        col: t.col,
                    })?;
                    self.next();
                    let mut args = Vec::new();
                    if self.peek().kind != Tok::RParen {
                        loop {
                            args.push(self.expr(0)?);
                            if self.peek().kind == Tok::Comma {
                                self.next();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    if args.len() != func.arity() {
                        return Err(ParseError::Arity {
                            name: name.clone(),
                            expected: func.arity(),
                            got: args.len(),
                            line: t.line,
                            col: t.col,
                        });
                    }
                    Ok(Node::Call(func, args))
                } else if name == "pi" {
                    Ok(Node::Pi)
                } else if let Some(v) = Var::from_name(name) {
                    Ok(Node::Var(v))
                } else {
                    Err(ParseError::UnknownIdentifier {
                        name: name.clone(),
                        line: t.line,
                        col: t.col,
                    })
                }
            }
            other => self.syntax(&t, format!("unexpected {}", other.describe())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(src: &str, env: Env) -> f64 {
        parse(src).unwrap().eval(&env).unwrap()
    }

    #[test]
    fn documented_values() {
        assert!((at("1 + 0.5*sin(2*pi*y1)", Env::new().with_y(&[0.25])) - 1.5).abs() < 1e-15);
        assert_eq!(at("cos(2*pi*y2)", Env::new().with_y(&[0.3, 0.0])), 1.0);
        assert_eq!(at("2^3", Env::new()), 8.0);
        assert_eq!(at("y1 - floor(y1)", Env::new().with_y(&[2.75])), 0.75);
        assert!((at("1/(2+sin(2*pi*y1))", Env::new().with_y(&[0.25])) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unbalanced_paren_reports_column() {
        let err = parse("x1 + (").unwrap_err();
        assert_eq!(err.position(), (1, 7));
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(at("-2^2", Env::new()), -4.0);
        assert_eq!(at("2^3^2", Env::new()), 512.0);
        assert_eq!(at("2^-1", Env::new()), 0.5);
        assert_eq!(at("8/4/2", Env::new()), 1.0);
        assert_eq!(at("1 - 2 - 3", Env::new()), -4.0);
        assert_eq!(at("2*3 + 4*5", Env::new()), 26.0);
        assert_eq!(at("-(1+2)*3", Env::new()), -9.0);
        assert_eq!(at("1e-3*1e3", Env::new()), 1.0);
        assert_eq!(at("max(1, min(5, 3))", Env::new()), 3.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(parse("foo + 1"), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(parse("y0"), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(parse("sin(1, 2)"), Err(ParseError::Arity { .. })));
        assert!(matches!(parse("max(1)"), Err(ParseError::Arity { .. })));
        assert!(matches!(parse("1 +* 2"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("1 2"), Err(ParseError::Syntax { .. })));
        let e = parse("1/(y1 - y1)").unwrap();
        assert_eq!(e.eval(&Env::new().with_y(&[0.3])), Err(EvalError::DivisionByZero));
        let e = parse("x1 + 1").unwrap();
        assert_eq!(e.eval(&Env::new()), Err(EvalError::Unbound("x1".into())));
        let e = parse("(-1)^0.5").unwrap();
        assert!(matches!(e.eval(&Env::new()), Err(EvalError::Domain(_))));
    }

    #[test]
    fn multiline_positions() {
        let err = parse("1 +\n  $").unwrap_err();
        assert_eq!(err.position(), (2, 3));
    }

    #[test]
    fn named_bindings() {
        let e = parse("x1*y2 + p1").unwrap();
        let mut b = HashMap::new();
        b.insert("x1".to_string(), 2.0);
        b.insert("y2".to_string(), 3.0);
        b.insert("p1".to_string(), 1.0);
        assert_eq!(evaluate(&e, &b), Ok(7.0));
    }

    #[test]
    fn pnorm_binding() {
        let e = parse("pnorm").unwrap();
        assert_eq!(e.eval(&Env::new().with_p(&[3.0, 4.0])), Ok(5.0));
    }

    #[test]
    fn free_variables() {
        let e = parse("exp(-x1) * (2 + sin(2*pi*y1)) + p2").unwrap();
        assert!(e.depends_on_x() && e.depends_on_y() && e.depends_on_p());
        assert_eq!(parse("2*pi").unwrap().as_constant(), Some(2.0 * std::f64::consts::PI));
        assert_eq!(parse("y1").unwrap().as_constant(), None);
    }

    #[test]
    fn periodicity_helper() {
        let per = parse("sin(2*pi*y1)*cos(2*pi*y2) + y1 - floor(y1)").unwrap();
        assert!(periodicity_defect(&per, 2, 100, 1).unwrap() < 1e-12);
        let not = parse("sin(pi*y1)").unwrap();
        assert!(periodicity_defect(&not, 1, 100, 1).unwrap() > 0.1);
    }
}
