//! Arithmetic expression language for time-dependent coefficients.
//!
//! System matrices `A(t)`, transforms `S(t)` and perturbations `f(t, x)` are
//! written in a small expression grammar (see `GRAMMAR.md` at the repo root):
//!
//! ```text
//! expr    := term  (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` is rejected; exponentiation is spelled `pow(base, exponent)`. There is
//! no implicit multiplication. Whitespace is insignificant.

use std::collections::BTreeSet;
use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Functions callable from expressions, with fixed arities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Abs,
    Sqrt,
    Pow,
    Min,
    Max,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Pow => "pow",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Pow | Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "ln" => Some(Func::Ln),
            "abs" => Some(Func::Abs),
            "sqrt" => Some(Func::Sqrt),
            "pow" => Some(Func::Pow),
            "min" => Some(Func::Min),
            "max" => Some(Func::Max),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }

    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }
}

/// Parsed expression tree.
///
/// A leading `-` directly on a numeric literal folds into the constant, so
/// `"-1"` parses to `Constant(-1.0)`; `-(x)` stays a unary node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Constant(f64),
    Variable(String),
    Neg(Box<Expression>),
    Binary {
        op: BinaryOp,
        lhs: Box<Expression>,
        rhs: Box<Expression>,
    },
    Call {
        func: Func,
        args: Vec<Expression>,
    },
}

/// Variable bindings for evaluation. Small and scan-based; expressions here
/// rarely reference more than a handful of names.
#[derive(Debug, Clone, Default)]
pub struct EvalContext {
    bindings: Vec<(String, f64)>,
}

impl EvalContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or overwrite a binding.
    pub fn set(&mut self, name: &str, value: f64) {
        if let Some(slot) = self.bindings.iter_mut().find(|(n, _)| n == name) {
            slot.1 = value;
        } else {
            self.bindings.push((name.to_owned(), value));
        }
    }

    pub fn bind(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.bindings
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected {}, found {found}", expected.join(" | "))]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("`{name}` takes {expects} argument(s), got {got} (at byte {offset})")]
    Arity {
        name: &'static str,
        expects: usize,
        got: usize,
        offset: usize,
    },
    #[error("`^` is not supported (byte {offset}); write pow(base, exponent)")]
    Caret { offset: usize },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("unbound variable `{name}`")]
    UnboundVariable { name: String },
    #[error("domain error: {func}({arg}) in `{subexpr}`")]
    Domain {
        func: &'static str,
        arg: f64,
        subexpr: String,
    },
}

impl Expression {
    /// Parse UTF-8 source into an expression tree.
    pub fn parse(source: &str) -> Result<Expression, ParseError> {
        let tokens = tokenize(source)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr()?;
        parser.expect_end()?;
        Ok(expr)
    }

    /// Evaluate with IEEE double-precision semantics, operands left to right.
    pub fn evaluate(&self, ctx: &EvalContext) -> Result<f64, EvalError> {
        match self {
            Expression::Constant(c) => Ok(*c),
            Expression::Variable(name) => {
                ctx.get(name).ok_or_else(|| EvalError::UnboundVariable {
                    name: name.clone(),
                })
            }
            Expression::Neg(inner) => Ok(-inner.evaluate(ctx)?),
            Expression::Binary { op, lhs, rhs } => {
                let a = lhs.evaluate(ctx)?;
                let b = rhs.evaluate(ctx)?;
                Ok(match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => a / b,
                })
            }
            Expression::Call { func, args } => {
                let mut vals = [0.0f64; 2];
                for (i, a) in args.iter().enumerate() {
                    vals[i] = a.evaluate(ctx)?;
                }
                let x = vals[0];
                match func {
                    Func::Sin => Ok(x.sin()),
                    Func::Cos => Ok(x.cos()),
                    Func::Exp => Ok(x.exp()),
                    Func::Abs => Ok(x.abs()),
                    Func::Ln => {
                        if x <= 0.0 {
                            Err(EvalError::Domain {
                                func: "ln",
                                arg: x,
                                subexpr: self.to_string(),
                            })
                        } else {
                            Ok(x.ln())
                        }
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            Err(EvalError::Domain {
                                func: "sqrt",
                                arg: x,
                                subexpr: self.to_string(),
                            })
                        } else {
                            Ok(x.sqrt())
                        }
                    }
                    Func::Pow => Ok(x.powf(vals[1])),
                    Func::Min => Ok(x.min(vals[1])),
                    Func::Max => Ok(x.max(vals[1])),
                }
            }
        }
    }

    /// Free variables in lexicographic order.
    pub fn free_vars(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expression::Constant(_) => {}
            Expression::Variable(name) => {
                out.insert(name.as_str());
            }
            Expression::Neg(inner) => inner.collect_vars(out),
            Expression::Binary { lhs, rhs, .. } => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            Expression::Call { args, .. } => {
                for a in args {
                    a.collect_vars(out);
                }
            }
        }
    }

    /// Replace every occurrence of the named variables by constants.
    pub fn substitute(&self, bindings: &[(&str, f64)]) -> Expression {
        match self {
            Expression::Constant(c) => Expression::Constant(*c),
            Expression::Variable(name) => {
                match bindings.iter().find(|(n, _)| n == name) {
                    Some((_, v)) => Expression::Constant(*v),
                    None => Expression::Variable(name.clone()),
                }
            }
            Expression::Neg(inner) => Expression::Neg(Box::new(inner.substitute(bindings))),
            Expression::Binary { op, lhs, rhs } => Expression::Binary {
                op: *op,
                lhs: Box::new(lhs.substitute(bindings)),
                rhs: Box::new(rhs.substitute(bindings)),
            },
            Expression::Call { func, args } => Expression::Call {
                func: *func,
                args: args.iter().map(|a| a.substitute(bindings)).collect(),
            },
        }
    }

    /// `a - b` as a tree, used when deriving `f0(t,x) = f(t,x) - f(t,0)`.
    pub fn sub(lhs: Expression, rhs: Expression) -> Expression {
        Expression::Binary {
            op: BinaryOp::Sub,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expression::Binary { op, .. } => op.precedence(),
            Expression::Neg(_) => 3,
            _ => 4,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let needs_parens = self.precedence() < min_prec;
        if needs_parens {
            write!(f, "(")?;
        }
        match self {
            Expression::Constant(c) => write!(f, "{c}")?,
            Expression::Variable(name) => write!(f, "{name}")?,
            // Always parenthesized so that `-(1)` round-trips as a unary node
            // rather than folding into a negative literal.
            Expression::Neg(inner) => {
                write!(f, "-(")?;
                inner.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expression::Binary { op, lhs, rhs } => {
                lhs.fmt_prec(f, op.precedence())?;
                write!(f, " {} ", op.symbol())?;
                rhs.fmt_prec(f, op.precedence() + 1)?;
            }
            Expression::Call { func, args } => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    a.fmt_prec(f, 0)?;
                }
                write!(f, ")")?;
            }
        }
        if needs_parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl Serialize for Expression {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expression {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Expression::parse(&s).map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(n) => format!("number `{n}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                out.push((Tok::Slash, i));
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
            b',' => {
                out.push((Tok::Comma, i));
                i += 1;
            }
            b'^' => return Err(ParseError::Caret { offset: i }),
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    expected: vec!["number"],
                    found: format!("`{text}`"),
                })?;
                out.push((Tok::Num(value), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_owned()), start));
            }
            _ => {
                return Err(ParseError::Syntax {
                    offset: i,
                    expected: vec!["number", "identifier", "operator", "`(`"],
                    found: format!("`{}`", &src[i..i + utf8_len(b)]),
                })
            }
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

fn utf8_len(first: u8) -> usize {
    match first {
        0x00..=0x7f => 1,
        0xc0..=0xdf => 2,
        0xe0..=0xef => 3,
        _ => 4,
    }
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &(Tok, usize) {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> (Tok, usize) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: Vec<&'static str>) -> ParseError {
        let (tok, offset) = self.peek();
        ParseError::Syntax {
            offset: *offset,
            expected,
            found: tok.describe(),
        }
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        if matches!(self.peek().0, Tok::End) {
            Ok(())
        } else {
            Err(self.error(vec!["operator", "end of input"]))
        }
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().0 {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => break,
            };
            self.advance();
            let rhs = self.term()?;
            lhs = Expression::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().0 {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => break,
            };
            self.advance();
            let rhs = self.unary()?;
            lhs = Expression::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expression, ParseError> {
        if matches!(self.peek().0, Tok::Minus) {
            self.advance();
            // A literal right after unary minus folds into the constant.
            if let Tok::Num(n) = self.peek().0 {
                self.advance();
                return Ok(Expression::Constant(-n));
            }
            let inner = self.unary()?;
            return Ok(Expression::Neg(Box::new(inner)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expression, ParseError> {
        match self.peek().0.clone() {
            Tok::Num(n) => {
                self.advance();
                Ok(Expression::Constant(n))
            }
            Tok::Ident(name) => {
                let (_, offset) = self.advance();
                if matches!(self.peek().0, Tok::LParen) {
                    self.advance();
                    let func = Func::from_name(&name)
                        .ok_or(ParseError::UnknownFunction { name, offset })?;
                    let mut args = vec![self.expr()?];
                    while matches!(self.peek().0, Tok::Comma) {
                        self.advance();
                        args.push(self.expr()?);
                    }
                    if !matches!(self.peek().0, Tok::RParen) {
                        return Err(self.error(vec!["`,`", "`)`"]));
                    }
                    self.advance();
                    if args.len() != func.arity() {
                        return Err(ParseError::Arity {
                            name: func.name(),
                            expects: func.arity(),
                            got: args.len(),
                            offset,
                        });
                    }
                    Ok(Expression::Call { func, args })
                } else {
                    Ok(Expression::Variable(name))
                }
            }
            Tok::LParen => {
                self.advance();
                let inner = self.expr()?;
                if !matches!(self.peek().0, Tok::RParen) {
                    return Err(self.error(vec!["operator", "`)`"]));
                }
                self.advance();
                Ok(inner)
            }
            _ => Err(self.error(vec!["number", "identifier", "`-`", "`(`"])),
        }
    }
}
