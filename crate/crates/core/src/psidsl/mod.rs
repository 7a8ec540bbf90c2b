//! Prescribed-curvature functions `psi(eta)` written as expressions in the
//! normal components `nx`, `ny`, `nz`.
//!
//! Supported: numeric literals, `+ - * / ^` (right-associative `^`, unary
//! minus binding looser than `^`), parentheses, and the functions `exp`,
//! `log`, `sin`, `cos`, `sqrt`, `abs`, `min`, `max`. Gradients come from
//! forward-mode dual numbers and are projected onto the tangent plane of
//! the sphere at the evaluation point.

mod dual;
mod parse;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use dual::Dual;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PsiError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("{name} at offset {offset} takes {expected} argument(s), got {got}")]
    Arity { name: String, offset: usize, expected: usize, got: usize },

    /// The Serrin precondition `psi > 0` fails at `eta`.
    #[error("psi = {value:e} is not positive at eta = {eta:?}")]
    NotPositive { value: f64, eta: [f64; 3] },

    #[error("eta is not a unit vector (|eta| = {norm})")]
    NotUnit { norm: f64 },

    #[error("'{function}' is not C^1,1; pass allow_nonsmooth to use it")]
    NonSmooth { function: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn is_smooth(self) -> bool {
        !matches!(self, Func::Abs | Func::Min | Func::Max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Normal component: 0 = nx, 1 = ny, 2 = nz.
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    fn eval(&self, n: &[Dual; 3]) -> Dual {
        match self {
            Expr::Num(v) => Dual::constant(*v),
            Expr::Var(i) => n[*i],
            Expr::Neg(e) => -e.eval(n),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(n), b.eval(n));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.pow(b),
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(n);
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Min => a.min(args[1].eval(n)),
                    Func::Max => a.max(args[1].eval(n)),
                }
            }
        }
    }

    fn first_nonsmooth(&self) -> Option<Func> {
        match self {
            Expr::Num(_) | Expr::Var(_) => None,
            Expr::Neg(e) => e.first_nonsmooth(),
            Expr::Bin(_, a, b) => a.first_nonsmooth().or_else(|| b.first_nonsmooth()),
            Expr::Call(f, args) => {
                if !f.is_smooth() {
                    Some(*f)
                } else {
                    args.iter().find_map(Expr::first_nonsmooth)
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(i) => f.write_str(["nx", "ny", "nz"][*i]),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let c = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                    BinOp::Mul => '*',
                    BinOp::Div => '/',
                    BinOp::Pow => '^',
                };
                write!(f, "({a} {c} {b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A parsed curvature function of the unit normal.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiExpr {
    root: Expr,
}

pub fn parse(text: &str) -> Result<PsiExpr, PsiError> {
    Ok(PsiExpr { root: parse::Parser::parse(text)? })
}

impl FromStr for PsiExpr {
    type Err = PsiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl fmt::Display for PsiExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl PsiExpr {
    pub fn root(&self) -> &Expr {
        &self.root
    }

    /// Value at an arbitrary point of R^3 (no unit-norm or sign checks).
    pub fn value(&self, n: [f64; 3]) -> f64 {
        self.root.eval(&n.map(Dual::constant)).v
    }

    /// Value and ambient gradient at an arbitrary point of R^3.
    pub fn eval_ambient(&self, n: [f64; 3]) -> Dual {
        let vars = [0, 1, 2].map(|i| Dual::variable(n[i], i));
        self.root.eval(&vars)
    }

    /// `(psi(eta), (I - eta eta^T) grad psi)` for a unit `eta` with `psi > 0`.
    pub fn eval_with_gradient(&self, eta: [f64; 3]) -> Result<(f64, [f64; 3]), PsiError> {
        let norm = (eta[0] * eta[0] + eta[1] * eta[1] + eta[2] * eta[2]).sqrt();
        if !((norm - 1.0).abs() <= 1e-9) {
            return Err(PsiError::NotUnit { norm });
        }
        let d = self.eval_ambient(eta);
        if !(d.v > 0.0) {
            return Err(PsiError::NotPositive { value: d.v, eta });
        }
        let radial = d.d[0] * eta[0] + d.d[1] * eta[1] + d.d[2] * eta[2];
        let grad = [0, 1, 2].map(|i| d.d[i] - radial * eta[i]);
        Ok((d.v, grad))
    }

    pub fn is_smooth(&self) -> bool {
        self.root.first_nonsmooth().is_none()
    }

    /// Rejects `abs`, `min`, `max` where a gradient of psi is needed.
    pub fn require_smooth(&self) -> Result<(), PsiError> {
        match self.root.first_nonsmooth() {
            Some(f) => Err(PsiError::NonSmooth { function: f.name() }),
            None => Ok(()),
        }
    }

    /// First sample where `psi <= 0` (or is not a number), if any.
    pub fn first_nonpositive(&self, samples: &[[f64; 3]]) -> Option<([f64; 3], f64)> {
        samples.iter().find_map(|&p| {
            let v = self.value(p);
            (!(v > 0.0)).then_some((p, v))
        })
    }
}
