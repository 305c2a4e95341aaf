//! Right-hand sides: the manufactured Stokes solution, constants and small
//! arithmetic expressions in `x` and `y`.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// `u* = curl(sin²(πx) sin²(πy))`.
pub fn manufactured_velocity(x: f64, y: f64) -> [f64; 2] {
    let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
    [PI * sx * sx * (2.0 * PI * y).sin(), -PI * (2.0 * PI * x).sin() * sy * sy]
}

/// `p* = sin(2πx) cos(2πy)`.
pub fn manufactured_pressure(x: f64, y: f64) -> f64 {
    (2.0 * PI * x).sin() * (2.0 * PI * y).cos()
}

/// Gradient of `u*` as `[[∂x u1, ∂y u1], [∂x u2, ∂y u2]]`.
pub fn manufactured_velocity_gradient(x: f64, y: f64) -> [[f64; 2]; 2] {
    let (s2x, c2x) = ((2.0 * PI * x).sin(), (2.0 * PI * x).cos());
    let (s2y, c2y) = ((2.0 * PI * y).sin(), (2.0 * PI * y).cos());
    let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
    [
        [PI * PI * s2x * s2y, 2.0 * PI * PI * sx * sx * c2y],
        [-2.0 * PI * PI * c2x * sy * sy, -PI * PI * s2x * s2y],
    ]
}

/// `f = −Δu* + ∇p*`.
pub fn manufactured_forcing(x: f64, y: f64) -> [f64; 2] {
    let (s2x, c2x) = ((2.0 * PI * x).sin(), (2.0 * PI * x).cos());
    let (s2y, c2y) = ((2.0 * PI * y).sin(), (2.0 * PI * y).cos());
    let p3 = 2.0 * PI.powi(3);
    [
        -p3 * s2y * (2.0 * c2x - 1.0) + 2.0 * PI * c2x * c2y,
        p3 * s2x * (2.0 * c2y - 1.0) - 2.0 * PI * s2x * s2y,
    ]
}

/// A body force.
#[derive(Clone, Debug, PartialEq)]
pub enum Forcing {
    Zero,
    Constant([f64; 2]),
    Manufactured,
    Expression { fx: Expr, fy: Expr },
}

impl Forcing {
    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        match self {
            Forcing::Zero => [0.0; 2],
            Forcing::Constant(v) => *v,
            Forcing::Manufactured => manufactured_forcing(x, y),
            Forcing::Expression { fx, fy } => [fx.eval(x, y), fy.eval(x, y)],
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero) || matches!(self, Forcing::Constant(v) if *v == [0.0; 2])
    }
}

/// Parsed arithmetic expression.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    Y,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Parses `x`, `y`, numbers, `pi`, `+ - * /`, parentheses, unary minus,
    /// `sin(·)`, `cos(·)` and `pow(·, ·)`.
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.sum()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expression(format!("unexpected {:?} in {src:?}", p.tokens[p.pos])));
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::X => x,
            Expr::Y => y,
            Expr::Neg(a) => -a.eval(x, y),
            Expr::Add(a, b) => a.eval(x, y) + b.eval(x, y),
            Expr::Sub(a, b) => a.eval(x, y) - b.eval(x, y),
            Expr::Mul(a, b) => a.eval(x, y) * b.eval(x, y),
            Expr::Div(a, b) => a.eval(x, y) / b.eval(x, y),
            Expr::Sin(a) => a.eval(x, y).sin(),
            Expr::Cos(a) => a.eval(x, y).cos(),
            Expr::Pow(a, b) => a.eval(x, y).powf(b.eval(x, y)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // Exponent part, e.g. 1e-3.
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
            let v = text.parse().map_err(|_| Error::Expression(format!("bad number {text:?}")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/(),".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character {c:?}")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expression(format!("expected {op:?}")))
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut e = self.product()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let r = self.product()?;
            e = if op == '+' { Expr::Add(Box::new(e), Box::new(r)) } else { Expr::Sub(Box::new(e), Box::new(r)) };
        }
        Ok(e)
    }

    fn product(&mut self) -> Result<Expr> {
        let mut e = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let r = self.unary()?;
            e = if op == '*' { Expr::Mul(Box::new(e), Box::new(r)) } else { Expr::Div(Box::new(e), Box::new(r)) };
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self.tokens.get(self.pos).cloned().ok_or_else(|| Error::Expression("unexpected end of expression".into()))?;
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Expr::Num(v)),
            Token::Op('(') => {
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Token::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::X),
                "y" => Ok(Expr::Y),
                "pi" => Ok(Expr::Num(PI)),
                "sin" | "cos" => {
                    self.expect('(')?;
                    let a = Box::new(self.sum()?);
                    self.expect(')')?;
                    Ok(if name == "sin" { Expr::Sin(a) } else { Expr::Cos(a) })
                }
                "pow" => {
                    self.expect('(')?;
                    let a = self.sum()?;
                    self.expect(',')?;
                    let b = self.sum()?;
                    self.expect(')')?;
                    Ok(Expr::Pow(Box::new(a), Box::new(b)))
                }
                _ => Err(Error::Expression(format!("unknown name {name:?}"))),
            },
            Token::Op(c) => Err(Error::Expression(format!("unexpected {c:?}"))),
        }
    }
}
