//! Dynamics expressions: parsing, evaluation and symbolic differentiation.
//!
//! Expressions are written over two vectors of variables, `x1[k]` (the current
//! state) and `x2[k]` (the state one delay earlier). The grammar is ordinary
//! infix arithmetic:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('+' | '-') unary | power
//! power   := primary ('^' unary)?            // right associative
//! primary := number | 'pi' | var | func '(' expr ')' | '(' expr ')'
//! var     := ('x1' | 'x2') '[' integer ']'
//! func    := 'exp' | 'log' | 'sin' | 'cos' | 'sqrt'
//! ```
//!
//! Juxtaposition is never multiplication: `2x1[0]` is a syntax error.

use std::fmt;

use thiserror::Error;

/// Which argument of `f(x1, x2)` a variable refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    /// `x1[k]`, the current state.
    Current,
    /// `x2[k]`, the delayed state.
    Delayed,
}

/// A single scalar variable `x1[k]` or `x2[k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub slot: Slot,
    pub index: usize,
}

impl Var {
    pub fn current(index: usize) -> Self {
        Var {
            slot: Slot::Current,
            index,
        }
    }

    pub fn delayed(index: usize) -> Self {
        Var {
            slot: Slot::Delayed,
            index,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Slot::Current => write!(f, "x1[{}]", self.index),
            Slot::Delayed => write!(f, "x2[{}]", self.index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("variable {var} out of range for state dimension {dimension}")]
    Index { var: Var, dimension: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("{func} of {argument} is undefined")]
    Domain { func: &'static str, argument: f64 },
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("variable {0} not bound at evaluation point")]
    Unbound(Var),
}

/// Parses `text` as an expression over `x1[0..n)` and `x2[0..n)`.
pub fn parse_expression(text: &str, n: usize) -> Result<Expr, ParseError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ParseError::Syntax {
            position: tok.pos,
            message: format!("unexpected {}", tok.kind.describe()),
        });
    }
    if let Some(var) = expr.variables().into_iter().find(|v| v.index >= n) {
        return Err(ParseError::Index { var, dimension: n });
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Op(char),
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier '{s}'"),
            TokenKind::Op(c) => format!("'{c}'"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
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
            let literal = &text[start..i];
            let value: f64 = literal.parse().map_err(|_| ParseError::Syntax {
                position: start,
                message: format!("malformed number '{literal}'"),
            })?;
            if !value.is_finite() {
                return Err(ParseError::Syntax {
                    position: start,
                    message: format!("number '{literal}' overflows"),
                });
            }
            tokens.push(Token {
                kind: TokenKind::Number(value),
                pos: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident(text[start..i].to_string()),
                pos: start,
            });
        } else if "+-*/^()[]".contains(c) {
            tokens.push(Token {
                kind: TokenKind::Op(c),
                pos: i,
            });
            i += 1;
        } else {
            let ch = text[i..].chars().next().unwrap_or('?');
            return Err(ParseError::Syntax {
                position: i,
                message: format!("unexpected character '{ch}'"),
            });
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c), ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn position(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            position: self.position(),
            message: message.into(),
        })
    }

    fn expect_op(&mut self, op: char) -> Result<(), ParseError> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            match self.peek() {
                Some(t) => self.error(format!("expected '{op}', found {}", t.kind.describe())),
                None => self.error(format!("expected '{op}', found end of input")),
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return self.error("unexpected end of input");
        };
        match tok.kind {
            TokenKind::Number(v) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            TokenKind::Op('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_op(')')?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                match name.as_str() {
                    "x1" | "x2" => {
                        self.expect_op('[')?;
                        let index = match self.peek() {
                            Some(Token {
                                kind: TokenKind::Number(v),
                                ..
                            }) if v.fract() == 0.0 && *v >= 0.0 => *v as usize,
                            _ => return self.error("expected a non-negative integer index"),
                        };
                        self.pos += 1;
                        self.expect_op(']')?;
                        let slot = if name == "x1" { Slot::Current } else { Slot::Delayed };
                        Ok(Expr::Var(Var { slot, index }))
                    }
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    _ => match Func::from_name(&name) {
                        Some(func) => {
                            self.expect_op('(')?;
                            let arg = self.expr()?;
                            self.expect_op(')')?;
                            Ok(Expr::Call(func, Box::new(arg)))
                        }
                        None => Err(ParseError::Syntax {
                            position: tok.pos,
                            message: format!("unknown identifier '{name}'"),
                        }),
                    },
                }
            }
            other => Err(ParseError::Syntax {
                position: tok.pos,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }
}

fn checked(value: f64) -> Result<f64, EvalError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EvalError::NonFinite(value))
    }
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    pub fn is_const(&self, value: f64) -> bool {
        matches!(self, Expr::Const(v) if *v == value)
    }

    /// Sorted, deduplicated list of the variables appearing in the tree.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => out.push(*v),
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Evaluates at `(x1, x2)`. Undefined operations and non-finite
    /// intermediate values are errors.
    pub fn eval(&self, x1: &[f64], x2: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(v) => Ok(*v),
            Expr::Var(var) => {
                let source = match var.slot {
                    Slot::Current => x1,
                    Slot::Delayed => x2,
                };
                source.get(var.index).copied().ok_or(EvalError::Unbound(*var))
            }
            Expr::Neg(a) => Ok(-a.eval(x1, x2)?),
            Expr::Add(a, b) => checked(a.eval(x1, x2)? + b.eval(x1, x2)?),
            Expr::Sub(a, b) => checked(a.eval(x1, x2)? - b.eval(x1, x2)?),
            Expr::Mul(a, b) => checked(a.eval(x1, x2)? * b.eval(x1, x2)?),
            Expr::Div(a, b) => {
                let num = a.eval(x1, x2)?;
                let den = b.eval(x1, x2)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                checked(num / den)
            }
            Expr::Pow(a, b) => {
                let base = a.eval(x1, x2)?;
                let exponent = b.eval(x1, x2)?;
                if base == 0.0 && exponent < 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                if base < 0.0 && exponent.fract() != 0.0 {
                    return Err(EvalError::Domain {
                        func: "pow",
                        argument: base,
                    });
                }
                checked(base.powf(exponent))
            }
            Expr::Call(func, a) => {
                let x = a.eval(x1, x2)?;
                let value = match func {
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(EvalError::Domain {
                                func: "log",
                                argument: x,
                            });
                        }
                        x.ln()
                    }
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(EvalError::Domain {
                                func: "sqrt",
                                argument: x,
                            });
                        }
                        x.sqrt()
                    }
                };
                checked(value)
            }
        }
    }

    /// Exact symbolic derivative with light constant folding.
    pub fn differentiate(&self, wrt: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(v) => Expr::Const(if *v == wrt { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.differentiate(wrt)),
            Expr::Add(a, b) => add(a.differentiate(wrt), b.differentiate(wrt)),
            Expr::Sub(a, b) => sub(a.differentiate(wrt), b.differentiate(wrt)),
            Expr::Mul(a, b) => add(
                mul(a.differentiate(wrt), (**b).clone()),
                mul((**a).clone(), b.differentiate(wrt)),
            ),
            Expr::Div(a, b) => {
                let da = a.differentiate(wrt);
                let db = b.differentiate(wrt);
                sub(
                    div(da, (**b).clone()),
                    div(mul((**a).clone(), db), pow((**b).clone(), Expr::Const(2.0))),
                )
            }
            Expr::Pow(a, b) => {
                let da = a.differentiate(wrt);
                let db = b.differentiate(wrt);
                match (&**a, &**b) {
                    (_, Expr::Const(c)) => mul(mul(Expr::Const(*c), pow((**a).clone(), Expr::Const(c - 1.0))), da),
                    (Expr::Const(base), _) => mul(mul(self.clone(), Expr::Const(base.ln())), db),
                    _ => mul(
                        self.clone(),
                        add(
                            mul(db, call(Func::Log, (**a).clone())),
                            div(mul((**b).clone(), da), (**a).clone()),
                        ),
                    ),
                }
            }
            Expr::Call(func, a) => {
                let da = a.differentiate(wrt);
                let inner = (**a).clone();
                let outer = match func {
                    Func::Exp => call(Func::Exp, inner),
                    Func::Log => div(Expr::Const(1.0), inner),
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                    Func::Sqrt => div(Expr::Const(0.5), call(Func::Sqrt, inner)),
                };
                mul(outer, da)
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(v) if *v < 0.0 => 3,
            _ => 5,
        }
    }
}

fn fold(value: f64) -> Option<Expr> {
    value.is_finite().then_some(Expr::Const(value))
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(v) => Expr::Const(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => fold(x + y).unwrap_or_else(|| Expr::Add(Box::new(a), Box::new(b))),
        _ if a.is_const(0.0) => b,
        _ if b.is_const(0.0) => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => fold(x - y).unwrap_or_else(|| Expr::Sub(Box::new(a), Box::new(b))),
        _ if b.is_const(0.0) => a,
        _ if a.is_const(0.0) => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => fold(x * y).unwrap_or_else(|| Expr::Mul(Box::new(a), Box::new(b))),
        _ if a.is_const(0.0) || b.is_const(0.0) => Expr::Const(0.0),
        _ if a.is_const(1.0) => b,
        _ if b.is_const(1.0) => a,
        _ if a.is_const(-1.0) => neg(b),
        _ if b.is_const(-1.0) => neg(a),
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => {
            fold(x / y).unwrap_or_else(|| Expr::Div(Box::new(a), Box::new(b)))
        }
        _ if a.is_const(0.0) => Expr::Const(0.0),
        _ if b.is_const(1.0) => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    if b.is_const(1.0) {
        a
    } else if b.is_const(0.0) {
        Expr::Const(1.0)
    } else {
        Expr::Pow(Box::new(a), Box::new(b))
    }
}

fn call(func: Func, a: Expr) -> Expr {
    Expr::Call(func, Box::new(a))
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prec = self.precedence();
        match self {
            Expr::Const(v) => write!(f, "{v:?}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                write_child(f, a, a.precedence() < 3 || matches!(**a, Expr::Const(_)))
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let op = match self {
                    Expr::Add(..) => " + ",
                    Expr::Sub(..) => " - ",
                    Expr::Mul(..) => "*",
                    _ => "/",
                };
                write_child(f, a, a.precedence() < prec)?;
                write!(f, "{op}")?;
                write_child(f, b, b.precedence() <= prec)
            }
            Expr::Pow(a, b) => {
                write_child(f, a, a.precedence() <= 4)?;
                write!(f, "^")?;
                write_child(f, b, b.precedence() < 3 || matches!(**b, Expr::Const(v) if v < 0.0))
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
