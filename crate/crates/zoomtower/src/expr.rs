//! A small expression language for branch formulas.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! `x` is the free variable, `pi` is bound, any other name must be supplied
//! as a parameter at parse time.  Functions: `sin cos exp log sqrt abs mod1`.

use std::collections::BTreeMap;
use std::fmt;

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var,
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Mod1,
}

impl Func {
    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "mod1" | "frac" => Func::Mod1,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "column {}: {}", self.pos + 1, self.msg)
    }
}

impl std::error::Error for ParseError {}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        Self::parse_with(src, &BTreeMap::new())
    }

    pub fn parse_with(src: &str, params: &BTreeMap<String, f64>) -> Result<Self, ParseError> {
        let mut p = Parser { s: src.as_bytes(), i: 0, params };
        let e = p.expr()?;
        p.ws();
        if p.i != p.s.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e.fold())
    }

    pub fn eval<T: Real>(&self, x: T) -> T {
        match self {
            Expr::Num(v) => T::lit(*v),
            Expr::Var => x,
            Expr::Neg(a) => -a.eval(x),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div => a / b,
                    Op::Pow => pow(a, b),
                }
            }
            Expr::Call(func, a) => {
                let a = a.eval(x);
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Mod1 => a - a.floor(),
                }
            }
        }
    }

    /// Constant folding; keeps `Num` leaves exact where the source was exact.
    fn fold(self) -> Self {
        match self {
            Expr::Neg(a) => match a.fold() {
                Expr::Num(v) => Expr::Num(-v),
                a => Expr::Neg(Box::new(a)),
            },
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.fold(), b.fold());
                if let (Expr::Num(_), Expr::Num(_)) = (&a, &b) {
                    let v = Expr::Bin(op, Box::new(a), Box::new(b)).eval(0.0f64);
                    Expr::Num(v)
                } else {
                    Expr::Bin(op, Box::new(a), Box::new(b))
                }
            }
            Expr::Call(func, a) => match a.fold() {
                Expr::Num(v) => Expr::Num(Expr::Call(func, Box::new(Expr::Num(v))).eval(0.0f64)),
                a => Expr::Call(func, Box::new(a)),
            },
            e => e,
        }
    }
}

// Small integer exponents go through repeated multiplication so that
// polynomial branches evaluate exactly where the arithmetic allows it.
fn pow<T: Real>(a: T, b: T) -> T {
    let r = b.round();
    if r == b && r.abs() <= T::lit(16.0) {
        a.powi(r.to_i32().unwrap_or(0))
    } else {
        a.powf(b)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var => write!(f, "x"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    Op::Add => "+",
                    Op::Sub => "-",
                    Op::Mul => "*",
                    Op::Div => "/",
                    Op::Pow => "^",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                    Func::Log => "log",
                    Func::Sqrt => "sqrt",
                    Func::Abs => "abs",
                    Func::Mod1 => "mod1",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ParseError {
        ParseError { pos: self.i, msg: msg.to_string() }
    }

    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.i).copied()
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.i += 1;
            let rhs = self.term()?;
            let op = if c == b'+' { Op::Add } else { Op::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.i += 1;
            let rhs = self.unary()?;
            let op = if c == b'*' { Op::Mul } else { Op::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(b'-') {
            self.i += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.peek() == Some(b'+') {
            self.i += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.i += 1;
            let e = self.unary()?;
            return Ok(Expr::Bin(Op::Pow, Box::new(base), Box::new(e)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.i += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected ')'"));
                }
                self.i += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.i;
                while self.i < self.s.len() && (self.s[self.i].is_ascii_alphanumeric() || self.s[self.i] == b'_') {
                    self.i += 1;
                }
                let name = std::str::from_utf8(&self.s[start..self.i]).unwrap_or("");
                if self.peek() == Some(b'(') {
                    let func = Func::from_name(name).ok_or_else(|| ParseError {
                        pos: start,
                        msg: format!("unknown function '{name}'"),
                    })?;
                    self.i += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(b')') {
                        return Err(self.err("expected ')' after argument"));
                    }
                    self.i += 1;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                match name {
                    "x" => Ok(Expr::Var),
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    _ => self.params.get(name).map(|v| Expr::Num(*v)).ok_or_else(|| ParseError {
                        pos: start,
                        msg: format!("unknown name '{name}'"),
                    }),
                }
            }
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of expression")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.i;
        let s = self.s;
        let digits = |i: &mut usize| {
            while *i < s.len() && s[*i].is_ascii_digit() {
                *i += 1;
            }
        };
        digits(&mut self.i);
        if self.i < s.len() && s[self.i] == b'.' {
            self.i += 1;
            digits(&mut self.i);
        }
        if self.i < s.len() && (s[self.i] == b'e' || s[self.i] == b'E') {
            let save = self.i;
            self.i += 1;
            if self.i < s.len() && (s[self.i] == b'+' || s[self.i] == b'-') {
                self.i += 1;
            }
            let before = self.i;
            digits(&mut self.i);
            if before == self.i {
                self.i = save;
            }
        }
        let txt = std::str::from_utf8(&s[start..self.i]).unwrap_or("");
        txt.parse::<f64>().map(Expr::Num).map_err(|_| ParseError { pos: start, msg: format!("bad number '{txt}'") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_power() {
        let e = Expr::parse("1 + 2*x^2").unwrap();
        assert_eq!(e.eval(3.0f64), 19.0);
        let e = Expr::parse("-x^2").unwrap();
        assert_eq!(e.eval(3.0f64), -9.0);
        let e = Expr::parse("2^-1").unwrap();
        assert_eq!(e, Expr::Num(0.5));
    }

    #[test]
    fn params_and_functions() {
        let mut p = BTreeMap::new();
        p.insert("a".to_string(), 4.0);
        let e = Expr::parse_with("a*x*(1-x)", &p).unwrap();
        assert_eq!(e.eval(0.5f64), 1.0);
        let e = Expr::parse("mod1(3*x) + abs(-1) + sin(pi/2)").unwrap();
        assert!((e.eval(0.5f64) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_position() {
        let err = Expr::parse("2*y").unwrap_err();
        assert_eq!(err.pos, 2);
        assert!(Expr::parse("sin(x").is_err());
        assert!(Expr::parse("1 2").is_err());
    }
}
