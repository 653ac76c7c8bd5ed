//! Small arithmetic expression language for coefficient functions.
//!
//! Grammar (precedence low to high):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          right-associative
//! atom    := number | var | 'pi' | func '(' expr ')' | '(' expr ')'
//! var     := x | v | t | vp
//! func    := sin | cos | exp | sqrt | abs
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{KinvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    V,
    T,
    /// Integration velocity `v′`.
    Vp,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::V => "v",
            Var::T => "t",
            Var::Vp => "vp",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "x" => Var::X,
            "v" => Var::V,
            "t" => Var::T,
            "vp" => Var::Vp,
            _ => return None,
        })
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Values for the free variables of an expression. Unset variables are
/// reported as unbound on evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    pub x: Option<f64>,
    pub v: Option<f64>,
    pub t: Option<f64>,
    pub vp: Option<f64>,
}

impl Bindings {
    pub fn xvt(x: f64, v: f64, t: f64) -> Self {
        Self {
            x: Some(x),
            v: Some(v),
            t: Some(t),
            vp: None,
        }
    }

    pub fn with_vp(mut self, vp: f64) -> Self {
        self.vp = Some(vp);
        self
    }

    fn get(&self, var: Var) -> Option<f64> {
        match var {
            Var::X => self.x,
            Var::V => self.v,
            Var::T => self.t,
            Var::Vp => self.vp,
        }
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text)?.parse_all()
    }

    /// Literal constant in canonical form: `Num` payloads are never negative,
    /// matching what the parser produces.
    pub fn constant(c: f64) -> Self {
        if c < 0.0 {
            Expr::Neg(Box::new(Expr::Num(-c)))
        } else {
            Expr::Num(c)
        }
    }

    pub fn eval(&self, b: &Bindings) -> Result<f64> {
        let r = match self {
            Expr::Num(c) => *c,
            Expr::Var(var) => b.get(*var).ok_or_else(|| KinvError::Unbound(var.name().into()))?,
            Expr::Neg(e) => -e.eval(b)?,
            Expr::Bin(op, l, r) => {
                let a = l.eval(b)?;
                let c = r.eval(b)?;
                match op {
                    BinOp::Add => a + c,
                    BinOp::Sub => a - c,
                    BinOp::Mul => a * c,
                    BinOp::Div => {
                        if c == 0.0 {
                            return Err(KinvError::Domain(format!("division by zero in `{self}`")));
                        }
                        a / c
                    }
                    BinOp::Pow => a.powf(c),
                }
            }
            Expr::Call(f, e) => {
                let a = e.eval(b)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(KinvError::Domain(format!("sqrt of negative value {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                }
            }
        };
        if r.is_finite() {
            Ok(r)
        } else {
            Err(KinvError::Domain(format!("`{self}` evaluates to {r}")))
        }
    }

    /// Evaluates with `(x, v, t)` bound.
    pub fn at(&self, x: f64, v: f64, t: f64) -> Result<f64> {
        self.eval(&Bindings::xvt(x, v, t))
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) | Expr::Call(_, e) => e.uses(var),
            Expr::Bin(_, l, r) => l.uses(var) || r.uses(var),
        }
    }

    /// True for a literal zero (possibly negated).
    pub fn is_zero_literal(&self) -> bool {
        match self {
            Expr::Num(c) => *c == 0.0,
            Expr::Neg(e) => e.is_zero_literal(),
            _ => false,
        }
    }
}

impl FromStr for Expr {
    type Err = KinvError;
    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

/// Fully parenthesized rendering; parsing it yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
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
    End,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
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
            let value: f64 = text.parse().map_err(|_| KinvError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            if !value.is_finite() {
                return Err(KinvError::Syntax {
                    offset: start,
                    message: format!("number `{text}` is out of range"),
                });
            }
            out.push((Tok::Num(value), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => {
                    return Err(KinvError::Syntax {
                        offset: start,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            };
            out.push((tok, start));
            i += c.len_utf8();
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

impl Parser {
    fn new(src: &str) -> Result<Self> {
        Ok(Self {
            toks: lex(src)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(KinvError::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn parse_all(mut self) -> Result<Expr> {
        let e = self.expr()?;
        match self.peek() {
            Tok::End => Ok(e),
            _ => self.error("unexpected trailing input"),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = *self.peek() {
            self.bump();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = *self.peek() {
            self.bump();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Tok::Op('-') = self.peek() {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Tok::Op('^') = self.peek() {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let (tok, offset) = self.bump();
        match tok {
            Tok::Num(c) => Ok(Expr::Num(c)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(var) = Var::from_name(&name) {
                    return Ok(Expr::Var(var));
                }
                if name == "pi" {
                    return Ok(Expr::Num(std::f64::consts::PI));
                }
                if let Some(func) = Func::from_name(&name) {
                    if *self.peek() != Tok::LParen {
                        return self.error(format!("expected `(` after `{name}`"));
                    }
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                Err(KinvError::UnknownName { name, offset })
            }
            Tok::End => Err(KinvError::Syntax {
                offset,
                message: "unexpected end of input".into(),
            }),
            Tok::Op(c) => Err(KinvError::Syntax {
                offset,
                message: format!("unexpected operator `{c}`"),
            }),
            Tok::RParen => Err(KinvError::Syntax {
                offset,
                message: "unexpected `)`".into(),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        if *self.peek() == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            self.error("expected `)`")
        }
    }
}
