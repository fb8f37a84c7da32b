//! Coefficient expressions: parsing, evaluation, symbolic differentiation.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | constant | variable | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```

use std::fmt;

use crate::error::{Error, Result};
use crate::special;

pub use crate::special::gamma_family;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constant {
    Pi,
    E,
    EulerGamma,
}

impl Constant {
    pub fn value(self) -> f64 {
        match self {
            Constant::Pi => std::f64::consts::PI,
            Constant::E => std::f64::consts::E,
            Constant::EulerGamma => 0.577_215_664_901_532_9,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Constant::Pi => "pi",
            Constant::E => "e",
            Constant::EulerGamma => "euler_gamma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Gamma,
    Digamma,
    Trigamma,
    Abs,
    Pow,
}

impl Func {
    const ALL: [Func; 10] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Ln,
        Func::Sqrt,
        Func::Gamma,
        Func::Digamma,
        Func::Trigamma,
        Func::Abs,
        Func::Pow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Gamma => "gamma",
            Func::Digamma => "digamma",
            Func::Trigamma => "trigamma",
            Func::Abs => "abs",
            Func::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        if self == Func::Pow {
            2
        } else {
            1
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    fn apply(self, args: &[f64]) -> Result<f64> {
        let a = args[0];
        let v = match self {
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Exp => a.exp(),
            Func::Ln => {
                if a <= 0.0 {
                    return Err(Error::DomainError(format!("ln({a})")));
                }
                a.ln()
            }
            Func::Sqrt => {
                if a < 0.0 {
                    return Err(Error::DomainError(format!("sqrt({a})")));
                }
                a.sqrt()
            }
            Func::Gamma => special::gamma(a)?,
            Func::Digamma => special::digamma(a)?,
            Func::Trigamma => special::trigamma(a)?,
            Func::Abs => a.abs(),
            Func::Pow => power(a, args[1])?,
        };
        if !v.is_finite() {
            return Err(Error::DomainError(format!("{}({a}) is not finite", self.name())));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Const(Constant),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

fn power(a: f64, b: f64) -> Result<f64> {
    let v = if b == b.trunc() && b.abs() < 1024.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    };
    if !v.is_finite() {
        return Err(Error::DomainError(format!("{a}^{b} is not a finite real")));
    }
    Ok(v)
}

// Smart constructors. They fold numeric constants and drop additive zeros and
// multiplicative ones; nothing else is rewritten.
impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn x() -> Expr {
        Expr::Var(Var::X)
    }

    pub fn y() -> Expr {
        Expr::Var(Var::Y)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_num() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_num() == Some(1.0)
    }

    fn fold(op: BinOp, a: f64, b: f64) -> Option<f64> {
        let v = match op {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => power(a, b).ok()?,
        };
        v.is_finite().then_some(v)
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_num(), b.as_num()) {
            if let Some(v) = Self::fold(op, x, y) {
                return Expr::Num(v);
            }
        }
        match op {
            BinOp::Add if a.is_zero() => b,
            BinOp::Add | BinOp::Sub if b.is_zero() => a,
            BinOp::Sub if a.is_zero() => Expr::neg(b),
            BinOp::Mul if a.is_zero() || b.is_zero() => Expr::Num(0.0),
            BinOp::Mul if a.is_one() => b,
            BinOp::Mul | BinOp::Div if b.is_one() => a,
            BinOp::Div if a.is_zero() => Expr::Num(0.0),
            BinOp::Pow if b.is_zero() => Expr::Num(1.0),
            BinOp::Pow if b.is_one() => a,
            _ => Expr::Bin(op, Box::new(a), Box::new(b)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Self::bin(BinOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Self::bin(BinOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Self::bin(BinOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Self::bin(BinOp::Div, a, b)
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        Self::bin(BinOp::Pow, a, b)
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Num(v) => Expr::Num(-v),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn call(f: Func, args: Vec<Expr>) -> Expr {
        if let Some(nums) = args.iter().map(Expr::as_num).collect::<Option<Vec<f64>>>() {
            if let Ok(v) = f.apply(&nums) {
                return Expr::Num(v);
            }
        }
        Expr::Call(f, args)
    }

    pub fn call1(f: Func, a: Expr) -> Expr {
        Self::call(f, vec![a])
    }

    /// Sum of terms, folding zeros.
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
        terms.into_iter().fold(Expr::Num(0.0), Expr::add)
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse(s)
    }
}

// ---------------------------------------------------------------- evaluation

impl Expr {
    /// Evaluate with variable bindings such as `&[("x", 0.5)]`.
    pub fn eval(&self, env: &[(&str, f64)]) -> Result<f64> {
        let lookup = |v: Var| {
            env.iter()
                .find(|(n, _)| *n == v.name())
                .map(|(_, val)| *val)
                .ok_or_else(|| Error::UnboundVariable(v.name().to_string()))
        };
        self.eval_with(&lookup)
    }

    pub fn eval_x(&self, x: f64) -> Result<f64> {
        self.eval_with(&|v| match v {
            Var::X => Ok(x),
            Var::Y => Err(Error::UnboundVariable("y".into())),
        })
    }

    pub fn eval_xy(&self, x: f64, y: f64) -> Result<f64> {
        self.eval_with(&|v| Ok(if v == Var::X { x } else { y }))
    }

    fn eval_with(&self, env: &dyn Fn(Var) -> Result<f64>) -> Result<f64> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Const(c) => Ok(c.value()),
            Expr::Var(v) => env(*v),
            Expr::Neg(a) => Ok(-a.eval_with(env)?),
            Expr::Bin(op, a, b) => {
                let a = a.eval_with(env)?;
                let b = b.eval_with(env)?;
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(Error::DomainError(format!("division of {a} by zero")))
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinOp::Pow => power(a, b),
                }
            }
            Expr::Call(f, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.eval_with(env))
                    .collect::<Result<Vec<_>>>()?;
                f.apply(&vals)
            }
        }
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Var(v) => *v == var,
            Expr::Num(_) | Expr::Const(_) => false,
            Expr::Neg(a) => a.uses(var),
            Expr::Bin(_, a, b) => a.uses(var) || b.uses(var),
            Expr::Call(_, args) => args.iter().any(|a| a.uses(var)),
        }
    }
}

// ----------------------------------------------------------- differentiation

impl Expr {
    pub fn differentiate(&self, var: Var) -> Result<Expr> {
        if !self.uses(var) {
            return Ok(Expr::Num(0.0));
        }
        Ok(match self {
            Expr::Num(_) | Expr::Const(_) => Expr::Num(0.0),
            Expr::Var(v) => Expr::Num(if *v == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.differentiate(var)?),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.as_ref(), b.as_ref());
                match op {
                    BinOp::Add => Expr::add(a.differentiate(var)?, b.differentiate(var)?),
                    BinOp::Sub => Expr::sub(a.differentiate(var)?, b.differentiate(var)?),
                    BinOp::Mul => Expr::add(
                        Expr::mul(a.differentiate(var)?, b.clone()),
                        Expr::mul(a.clone(), b.differentiate(var)?),
                    ),
                    BinOp::Div => Expr::div(
                        Expr::sub(
                            Expr::mul(a.differentiate(var)?, b.clone()),
                            Expr::mul(a.clone(), b.differentiate(var)?),
                        ),
                        Expr::pow(b.clone(), Expr::Num(2.0)),
                    ),
                    BinOp::Pow => diff_pow(a, b, var)?,
                }
            }
            Expr::Call(f, args) => {
                let u = &args[0];
                let du = u.differentiate(var)?;
                let outer = match f {
                    Func::Sin => Expr::call1(Func::Cos, u.clone()),
                    Func::Cos => Expr::neg(Expr::call1(Func::Sin, u.clone())),
                    Func::Exp => Expr::call1(Func::Exp, u.clone()),
                    Func::Ln => Expr::div(Expr::Num(1.0), u.clone()),
                    Func::Sqrt => Expr::div(
                        Expr::Num(1.0),
                        Expr::mul(Expr::Num(2.0), Expr::call1(Func::Sqrt, u.clone())),
                    ),
                    Func::Gamma => Expr::mul(
                        Expr::call1(Func::Gamma, u.clone()),
                        Expr::call1(Func::Digamma, u.clone()),
                    ),
                    Func::Digamma => Expr::call1(Func::Trigamma, u.clone()),
                    Func::Trigamma => {
                        return Err(Error::NotDifferentiable(
                            "trigamma has no derivative in the expression language".into(),
                        ))
                    }
                    Func::Abs => {
                        return Err(Error::NotDifferentiable(format!("abs({u}) is not smooth")))
                    }
                    Func::Pow => return diff_pow(u, &args[1], var),
                };
                Expr::mul(outer, du)
            }
        })
    }

    /// k-th derivative with respect to `var`.
    pub fn nth_derivative(&self, var: Var, k: usize) -> Result<Expr> {
        let mut e = self.clone();
        for _ in 0..k {
            e = e.differentiate(var)?;
        }
        Ok(e)
    }
}

fn diff_pow(a: &Expr, b: &Expr, var: Var) -> Result<Expr> {
    let da = a.differentiate(var)?;
    if !b.uses(var) {
        // b * a^(b-1) * a'
        let lowered = Expr::pow(a.clone(), Expr::sub(b.clone(), Expr::Num(1.0)));
        return Ok(Expr::mul(Expr::mul(b.clone(), lowered), da));
    }
    let db = b.differentiate(var)?;
    let whole = Expr::pow(a.clone(), b.clone());
    if !a.uses(var) {
        return Ok(Expr::mul(
            whole,
            Expr::mul(Expr::call1(Func::Ln, a.clone()), db),
        ));
    }
    // a^b (b' ln a + b a' / a)
    let inner = Expr::add(
        Expr::mul(db, Expr::call1(Func::Ln, a.clone())),
        Expr::div(Expr::mul(b.clone(), da), a.clone()),
    );
    Ok(Expr::mul(whole, inner))
}

// ------------------------------------------------------------------ printing

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn prec(&self) -> u8 {
        match self {
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => PREC_NEG,
            Expr::Num(_) | Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => PREC_ATOM,
            Expr::Neg(_) => PREC_NEG,
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => PREC_ADD,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => PREC_MUL,
            Expr::Bin(BinOp::Pow, ..) => PREC_POW,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.prec() < min {
            write!(f, "(")?;
            self.write_at(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Const(c) => write!(f, "{}", c.name()),
            Expr::Var(v) => write!(f, "{}", v.name()),
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.write_at(f, PREC_NEG)
            }
            Expr::Bin(op, a, b) => {
                let (lmin, rmin) = match op {
                    BinOp::Add | BinOp::Sub => (PREC_ADD, PREC_MUL),
                    BinOp::Mul | BinOp::Div => (PREC_MUL, PREC_NEG),
                    BinOp::Pow => (PREC_ATOM, PREC_NEG),
                };
                a.write_at(f, lmin)?;
                match op {
                    BinOp::Add | BinOp::Sub => write!(f, " {} ", op.symbol())?,
                    _ => write!(f, "{}", op.symbol())?,
                }
                b.write_at(f, rmin)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    a.write_at(f, 0)?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, 0)
    }
}

// ------------------------------------------------------------------- parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

fn syntax(position: usize, expected: &[&str]) -> Error {
    Error::SyntaxError {
        position,
        expected: expected.iter().map(|s| s.to_string()).collect(),
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (at, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|p| p.1.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            // exponent only when digits follow; "2e" lexes as 2 then the constant e
            if i < chars.len() && matches!(chars[i].1, 'e' | 'E') {
                let mut k = i + 1;
                if k < chars.len() && matches!(chars[k].1, '+' | '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].1.is_ascii_digit() {
                    i = k;
                    while i < chars.len() && chars[i].1.is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let end = chars.get(i).map_or(src.len(), |p| p.0);
            let text = &src[at..end];
            let v: f64 = text.parse().map_err(|_| syntax(chars[start].0, &["number"]))?;
            out.push((Tok::Num(v), at));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            let end = chars.get(i).map_or(src.len(), |p| p.0);
            out.push((Tok::Ident(src[at..end].to_string()), at));
        } else if "+-*/^(),".contains(c) {
            out.push((Tok::Sym(c), at));
            i += 1;
        } else {
            return Err(syntax(at, &["number", "identifier", "operator", "'('"]));
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

const PRIMARY_EXPECTED: [&str; 4] = ["number", "identifier", "'('", "'-'"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn at(&self) -> usize {
        self.toks[self.pos].1
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Sym(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let at = self.at();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Tok::Sym('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(syntax(self.at(), &["')'", "operator"]));
                }
                Ok(e)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => return Ok(Expr::Var(Var::X)),
                    "y" => return Ok(Expr::Var(Var::Y)),
                    "pi" => return Ok(Expr::Const(Constant::Pi)),
                    "e" => return Ok(Expr::Const(Constant::E)),
                    "euler_gamma" => return Ok(Expr::Const(Constant::EulerGamma)),
                    _ => {}
                }
                let Some(func) = Func::from_name(&name) else {
                    let mut known = vec!["x", "y", "pi", "e", "euler_gamma"];
                    known.extend(Func::ALL.iter().map(|f| f.name()));
                    return Err(syntax(at, &known));
                };
                if !self.eat('(') {
                    return Err(syntax(self.at(), &["'('"]));
                }
                let mut args = vec![self.expr()?];
                while args.len() < func.arity() {
                    if !self.eat(',') {
                        return Err(syntax(self.at(), &["','"]));
                    }
                    args.push(self.expr()?);
                }
                if !self.eat(')') {
                    return Err(syntax(self.at(), &["')'"]));
                }
                Ok(Expr::Call(func, args))
            }
            _ => Err(syntax(at, &PRIMARY_EXPECTED)),
        }
    }
}

/// Parse an expression; errors carry the byte offset and the expected tokens.
pub fn parse(text: &str) -> Result<Expr> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(syntax(p.at(), &["operator", "end of input"]));
    }
    Ok(e)
}
