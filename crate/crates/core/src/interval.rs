//! Closed intervals, boxes, and natural interval extension of flow expressions.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::model::VarId;

/// Closed real interval `[lo, hi]`. Also used for rate intervals `dx in [a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

pub type RateInterval = Interval;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntervalError {
    #[error("divisor of `{0}` ranges over an interval containing zero")]
    DivisionByZero(Expr),
    #[error("variable v{} is not covered by the box", .0 .0)]
    UnboundVariable(VarId),
    #[error("non-finite bound produced by `{0}`")]
    NonFinite(Expr),
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "inverted interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(c: f64) -> Self {
        Interval { lo: c, hi: c }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn is_valid(&self) -> bool {
        self.lo <= self.hi && !self.lo.is_nan() && !self.hi.is_nan()
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    fn widened(self) -> Interval {
        Interval { lo: self.lo.next_down(), hi: self.hi.next_up() }
    }

    fn from_candidates(c: &[f64]) -> Interval {
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }

    pub fn add(self, o: Interval) -> Interval {
        Interval { lo: self.lo + o.lo, hi: self.hi + o.hi }
    }

    pub fn sub(self, o: Interval) -> Interval {
        Interval { lo: self.lo - o.hi, hi: self.hi - o.lo }
    }

    pub fn neg(self) -> Interval {
        Interval { lo: -self.hi, hi: -self.lo }
    }

    pub fn mul(self, o: Interval) -> Interval {
        Self::from_candidates(&[self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi])
    }

    /// `None` when the divisor contains zero.
    pub fn div(self, o: Interval) -> Option<Interval> {
        if o.contains_zero() {
            return None;
        }
        Some(Self::from_candidates(&[
            self.lo / o.lo,
            self.lo / o.hi,
            self.hi / o.lo,
            self.hi / o.hi,
        ]))
    }

    /// `None` for a negative exponent over an interval containing zero.
    pub fn powi(self, n: i32) -> Option<Interval> {
        if n == 0 {
            return Some(Interval::point(1.0));
        }
        if n < 0 && self.contains_zero() {
            return None;
        }
        let a = self.lo.powi(n);
        let b = self.hi.powi(n);
        let out = if n % 2 != 0 || self.lo >= 0.0 || self.hi <= 0.0 {
            Self::from_candidates(&[a, b])
        } else {
            // even power straddling zero; n > 0 here
            let w = Interval { lo: 0.0, hi: a.max(b) }.widened();
            return Some(Interval { lo: 0.0, hi: w.hi });
        };
        Some(out.widened())
    }

    pub fn exp(self) -> Interval {
        Interval { lo: self.lo.exp(), hi: self.hi.exp() }.widened()
    }

    pub fn sin(self) -> Interval {
        // sin peaks at pi/2 + 2k pi and bottoms at -pi/2 + 2k pi
        periodic_range(self, f64::sin, PI / 2.0, -PI / 2.0)
    }

    pub fn cos(self) -> Interval {
        periodic_range(self, f64::cos, 0.0, PI)
    }
}

fn periodic_range(x: Interval, f: fn(f64) -> f64, peak: f64, trough: f64) -> Interval {
    let full = Interval { lo: -1.0, hi: 1.0 };
    if !(x.width() < 2.0 * PI) {
        return full;
    }
    let mut out = Interval::from_candidates(&[f(x.lo), f(x.hi)]).widened();
    let hits = |phase: f64| {
        let k = ((x.lo - phase) / (2.0 * PI)).ceil();
        let p = phase + 2.0 * PI * k;
        // slack covers rounding in locating the extremum
        p <= x.hi + 1e-12 * (1.0 + x.hi.abs()) || p - 2.0 * PI >= x.lo - 1e-12 * (1.0 + x.lo.abs())
    };
    if hits(peak) {
        out.hi = 1.0;
    }
    if hits(trough) {
        out.lo = -1.0;
    }
    Interval { lo: out.lo.max(-1.0), hi: out.hi.min(1.0) }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Axis-aligned box: one closed interval per state variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox(pub Vec<Interval>);

impl StateBox {
    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, v: VarId) -> Interval {
        self.0[v.0]
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.0.len() && self.0.iter().zip(point).all(|(i, x)| i.contains(*x))
    }

    /// Range of `sum c_i x_i` over the box.
    pub fn linear_range(&self, coeffs: &[(VarId, f64)]) -> Interval {
        coeffs.iter().fold(Interval::point(0.0), |acc, (v, c)| {
            acc.add(self.get(*v).mul(Interval::point(*c)))
        })
    }
}

/// Natural interval extension of `e` over `b`. The result encloses every point
/// evaluation of `e` at points of `b`.
pub fn eval_interval(e: &Expr, b: &StateBox) -> Result<Interval, IntervalError> {
    let out = match e {
        Expr::Const(c) => Interval::point(*c),
        Expr::Var(v) => *b.0.get(v.0).ok_or(IntervalError::UnboundVariable(*v))?,
        Expr::Neg(a) => eval_interval(a, b)?.neg(),
        Expr::Add(x, y) => eval_interval(x, b)?.add(eval_interval(y, b)?),
        Expr::Sub(x, y) => eval_interval(x, b)?.sub(eval_interval(y, b)?),
        Expr::Mul(x, y) => eval_interval(x, b)?.mul(eval_interval(y, b)?),
        Expr::Div(x, y) => eval_interval(x, b)?
            .div(eval_interval(y, b)?)
            .ok_or_else(|| IntervalError::DivisionByZero(e.clone()))?,
        Expr::Pow(a, n) => eval_interval(a, b)?
            .powi(*n)
            .ok_or_else(|| IntervalError::DivisionByZero(e.clone()))?,
        Expr::Sin(a) => eval_interval(a, b)?.sin(),
        Expr::Cos(a) => eval_interval(a, b)?.cos(),
        Expr::Exp(a) => eval_interval(a, b)?.exp(),
    };
    if out.lo.is_finite() && out.hi.is_finite() && out.lo <= out.hi {
        Ok(out)
    } else {
        Err(IntervalError::NonFinite(e.clone()))
    }
}
