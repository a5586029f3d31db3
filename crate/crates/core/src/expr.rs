//! Flow right-hand sides: a small expression tree over the state variables.

use std::fmt;

use crate::model::VarId;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(VarId),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Integer power. Negative exponents divide.
    Pow(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(Expr),
    #[error("variable v{} is not bound in the valuation", .0 .0)]
    UnboundVariable(VarId),
    #[error("non-finite value produced by `{0}`")]
    NonFinite(Expr),
}

impl Expr {
    pub fn var(id: usize) -> Self {
        Expr::Var(VarId(id))
    }

    pub fn neg(e: Expr) -> Self {
        Expr::Neg(Box::new(e))
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Self {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(a: Expr, n: i32) -> Self {
        Expr::Pow(Box::new(a), n)
    }

    pub fn sin(a: Expr) -> Self {
        Expr::Sin(Box::new(a))
    }

    pub fn cos(a: Expr) -> Self {
        Expr::Cos(Box::new(a))
    }

    pub fn exp(a: Expr) -> Self {
        Expr::Exp(Box::new(a))
    }

    /// Evaluates the expression at a point. `val[k]` is the value of variable `k`.
    pub fn eval(&self, val: &[f64]) -> Result<f64, EvalError> {
        let out = match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => *val.get(v.0).ok_or(EvalError::UnboundVariable(*v))?,
            Expr::Neg(a) => -a.eval(val)?,
            Expr::Add(a, b) => a.eval(val)? + b.eval(val)?,
            Expr::Sub(a, b) => a.eval(val)? - b.eval(val)?,
            Expr::Mul(a, b) => a.eval(val)? * b.eval(val)?,
            Expr::Div(a, b) => {
                let num = a.eval(val)?;
                let den = b.eval(val)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero(self.clone()));
                }
                num / den
            }
            Expr::Pow(a, n) => {
                let base = a.eval(val)?;
                if base == 0.0 && *n < 0 {
                    return Err(EvalError::DivisionByZero(self.clone()));
                }
                base.powi(*n)
            }
            Expr::Sin(a) => a.eval(val)?.sin(),
            Expr::Cos(a) => a.eval(val)?.cos(),
            Expr::Exp(a) => a.eval(val)?.exp(),
        };
        if out.is_finite() {
            Ok(out)
        } else {
            Err(EvalError::NonFinite(self.clone()))
        }
    }

    /// Visits every variable occurrence.
    pub fn for_each_var(&self, f: &mut impl FnMut(VarId)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => f(*v),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => {
                a.for_each_var(f)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.for_each_var(f);
                b.for_each_var(f);
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        let mut any = false;
        self.for_each_var(&mut |_| any = true);
        !any
    }

    /// Value of a variable-free expression, if it evaluates cleanly.
    pub fn constant_value(&self) -> Option<f64> {
        if self.is_constant() {
            self.eval(&[]).ok()
        } else {
            None
        }
    }

    /// Decomposes an affine expression into `(coefficients, constant)` with one
    /// coefficient slot per variable. Returns `None` for anything nonlinear.
    pub fn as_affine(&self, nvars: usize) -> Option<(Vec<f64>, f64)> {
        match self {
            Expr::Const(c) => Some((vec![0.0; nvars], *c)),
            Expr::Var(v) => {
                if v.0 >= nvars {
                    return None;
                }
                let mut coeffs = vec![0.0; nvars];
                coeffs[v.0] = 1.0;
                Some((coeffs, 0.0))
            }
            Expr::Neg(a) => {
                let (c, k) = a.as_affine(nvars)?;
                Some((c.into_iter().map(|x| -x).collect(), -k))
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                let (ca, ka) = a.as_affine(nvars)?;
                let (cb, kb) = b.as_affine(nvars)?;
                let sign = if matches!(self, Expr::Add(..)) { 1.0 } else { -1.0 };
                let coeffs = ca.iter().zip(&cb).map(|(x, y)| x + sign * y).collect();
                Some((coeffs, ka + sign * kb))
            }
            Expr::Mul(a, b) => {
                let (ca, ka) = a.as_affine(nvars)?;
                let (cb, kb) = b.as_affine(nvars)?;
                if ca.iter().all(|c| *c == 0.0) {
                    Some((cb.iter().map(|c| c * ka).collect(), ka * kb))
                } else if cb.iter().all(|c| *c == 0.0) {
                    Some((ca.iter().map(|c| c * kb).collect(), ka * kb))
                } else {
                    None
                }
            }
            Expr::Div(a, b) => {
                let (ca, ka) = a.as_affine(nvars)?;
                let (cb, kb) = b.as_affine(nvars)?;
                if cb.iter().any(|c| *c != 0.0) || kb == 0.0 {
                    return None;
                }
                Some((ca.iter().map(|c| c / kb).collect(), ka / kb))
            }
            _ => {
                let k = self.constant_value()?;
                Some((vec![0.0; nvars], k))
            }
        }
    }

    /// Display adapter resolving variable ids to names.
    pub fn display<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names: Some(names) }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Pow(..) => 3,
            Expr::Neg(..) => 4,
            Expr::Const(c) if *c < 0.0 || c.is_sign_negative() => 4,
            _ => 5,
        }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: Option<&'a [String]>,
}

impl ExprDisplay<'_> {
    fn child<'b>(&'b self, e: &'b Expr) -> ExprDisplay<'b> {
        ExprDisplay { expr: e, names: self.names }
    }

    fn write_operand(&self, f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
        if e.precedence() < min_prec {
            write!(f, "({})", self.child(e))
        } else {
            write!(f, "{}", self.child(e))
        }
    }
}

// Parenthesization mirrors the parser: unary minus > ^ > * / > + -, with
// left-associative binary operators. Printing then reparsing yields the same tree.
impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(v) => match self.names.and_then(|n| n.get(v.0)) {
                Some(name) => write!(f, "{name}"),
                None => write!(f, "v{}", v.0),
            },
            Expr::Neg(a) => {
                write!(f, "-")?;
                // The parser folds `-<literal>` into a constant, so literals stay grouped here.
                if a.precedence() < 5 || matches!(**a, Expr::Const(_)) {
                    write!(f, "({})", self.child(a))
                } else {
                    write!(f, "{}", self.child(a))
                }
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                self.write_operand(f, a, 1)?;
                let op = if matches!(self.expr, Expr::Add(..)) { "+" } else { "-" };
                write!(f, " {op} ")?;
                self.write_operand(f, b, 2)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                self.write_operand(f, a, 2)?;
                let op = if matches!(self.expr, Expr::Mul(..)) { "*" } else { "/" };
                write!(f, " {op} ")?;
                self.write_operand(f, b, 3)
            }
            Expr::Pow(a, n) => {
                self.write_operand(f, a, 4)?;
                write!(f, "^{n}")
            }
            Expr::Sin(a) => write!(f, "sin({})", self.child(a)),
            Expr::Cos(a) => write!(f, "cos({})", self.child(a)),
            Expr::Exp(a) => write!(f, "exp({})", self.child(a)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        ExprDisplay { expr: self, names: None }.fmt(f)
    }
}
