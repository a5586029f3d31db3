//! Text format for hybrid automata.
//!
//! ```text
//! automaton thermostat
//! var x in [0, 40];
//! location entry {}
//! location off { invariant: x >= 18; flow: dx = -0.1 * x; }
//! location on  { invariant: x <= 22; flow: dx = 5 - 0.1 * x; }
//! location bad { flow: dx in [0, 0]; }
//! bad: bad;
//! init entry;
//! transition entry -> off { reset: x := 20; }
//! transition off -> on    { guard: x <= 18; }
//! ```
//!
//! Flows are either `dx = <expr>` or `dx in [a, b]`. Constraints are linear
//! comparisons, optionally chained as `a <= expr <= b`.

mod lexer;
mod serialize;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use lexer::{tokenize, Tok, Token};
pub use serialize::serialize_model;

use crate::expr::Expr;
use crate::interval::Interval;
use crate::model::{
    Flow, HybridAutomaton, LinearConstraint, LocId, Location, Reset, Transition, VarId, Variable,
    Violation,
};

const MAX_NESTING: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub token: String,
}

impl ParseError {
    fn new(line: usize, column: usize, message: impl Into<String>, token: &str) -> Self {
        ParseError { line, column, message: message.into(), token: token.to_string() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)?;
        if !self.token.is_empty() {
            write!(f, " (at `{}`)", self.token)?;
        }
        Ok(())
    }
}

/// Parses a model and checks it with [`HybridAutomaton::validate`].
pub fn parse_model(src: &str) -> Result<HybridAutomaton, ParseError> {
    let tokens = tokenize(src)?;
    Parser { tokens, pos: 0, vars: Vec::new(), depth: 0 }.model()
}

#[derive(Default)]
struct PendingTransition {
    source: (String, Token),
    target: (String, Token),
    guard: Vec<LinearConstraint>,
    resets: Vec<Reset>,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    vars: Vec<Variable>,
    depth: usize,
}

impl Default for Token {
    fn default() -> Self {
        Token { tok: Tok::Eof, text: String::new(), line: 1, col: 1 }
    }
}

fn err_at(t: &Token, msg: impl Into<String>) -> ParseError {
    ParseError::new(t.line, t.col, msg, &t.text)
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Token {
        &self.tokens[(self.pos + k).min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, ParseError> {
        if self.peek().tok == tok {
            Ok(self.bump())
        } else {
            Err(err_at(self.peek(), format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Token), ParseError> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                Ok((s, self.bump()))
            }
            _ => Err(err_at(self.peek(), format!("expected {what}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<Token, ParseError> {
        match &self.peek().tok {
            Tok::Ident(s) if s == kw => Ok(self.bump()),
            _ => Err(err_at(self.peek(), format!("expected `{kw}`"))),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn signed_number(&mut self) -> Result<f64, ParseError> {
        let neg = match self.peek().tok {
            Tok::Minus => {
                self.bump();
                true
            }
            Tok::Plus => {
                self.bump();
                false
            }
            _ => false,
        };
        match self.peek().tok {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => Err(err_at(self.peek(), "expected number")),
        }
    }

    fn interval(&mut self) -> Result<Interval, ParseError> {
        let open = self.expect(Tok::LBracket, "`[`")?;
        let lo = self.signed_number()?;
        self.expect(Tok::Comma, "`,`")?;
        let hi = self.signed_number()?;
        self.expect(Tok::RBracket, "`]`")?;
        if lo > hi {
            return Err(err_at(&open, format!("empty interval [{lo}, {hi}]")));
        }
        Ok(Interval::new(lo, hi))
    }

    fn model(mut self) -> Result<HybridAutomaton, ParseError> {
        self.keyword("automaton")?;
        let (name, _) = self.ident("automaton name")?;
        let mut locations: Vec<(Location, Token)> = Vec::new();
        let mut transitions: Vec<(PendingTransition, Token)> = Vec::new();
        let mut init: Option<(String, Token)> = None;
        let mut bad: Vec<(String, Token)> = Vec::new();
        let mut var_tokens: Vec<Token> = Vec::new();
        loop {
            let t = self.peek().clone();
            match &t.tok {
                Tok::Eof => break,
                Tok::Ident(kw) => match kw.as_str() {
                    "var" => {
                        self.bump();
                        if !locations.is_empty() || !transitions.is_empty() {
                            return Err(err_at(&t, "variables must be declared before locations"));
                        }
                        loop {
                            let (vname, vt) = self.ident("variable name")?;
                            if self.vars.iter().any(|v| v.name == vname) {
                                return Err(err_at(&vt, format!("duplicate variable `{vname}`")));
                            }
                            self.keyword("in")?;
                            let range = self.interval()?;
                            self.vars.push(Variable { name: vname, range });
                            var_tokens.push(vt);
                            if self.peek().tok == Tok::Comma {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                        self.expect(Tok::Semi, "`;`")?;
                    }
                    "location" => {
                        self.bump();
                        let (lname, lt) = self.ident("location name")?;
                        if locations.iter().any(|(l, _)| l.name == lname) {
                            return Err(err_at(&lt, format!("duplicate location `{lname}`")));
                        }
                        let loc = self.location_body(lname)?;
                        locations.push((loc, lt));
                    }
                    "transition" => {
                        self.bump();
                        let source = self.ident("source location")?;
                        self.expect(Tok::Arrow, "`->`")?;
                        let target = self.ident("target location")?;
                        let mut pending =
                            PendingTransition { source, target, ..Default::default() };
                        self.transition_body(&mut pending)?;
                        transitions.push((pending, t.clone()));
                    }
                    "init" => {
                        self.bump();
                        if init.is_some() {
                            return Err(err_at(&t, "initial location declared twice"));
                        }
                        init = Some(self.ident("initial location")?);
                        self.expect(Tok::Semi, "`;`")?;
                    }
                    "bad" => {
                        self.bump();
                        self.expect(Tok::Colon, "`:`")?;
                        loop {
                            bad.push(self.ident("bad location")?);
                            if self.peek().tok == Tok::Comma {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                        self.expect(Tok::Semi, "`;`")?;
                    }
                    _ => return Err(err_at(&t, "expected `var`, `location`, `transition`, `init` or `bad`")),
                },
                _ => return Err(err_at(&t, "expected a declaration")),
            }
        }
        let eof = self.peek().clone();
        let index: BTreeMap<String, LocId> =
            locations.iter().enumerate().map(|(i, (l, _))| (l.name.clone(), LocId(i))).collect();
        let resolve = |(name, tok): &(String, Token)| {
            index.get(name).copied().ok_or_else(|| err_at(tok, format!("unknown location `{name}`")))
        };
        let (init_name, init_tok) = init.ok_or_else(|| err_at(&eof, "missing `init` declaration"))?;
        let initial = resolve(&(init_name, init_tok))?;
        let bad: BTreeSet<LocId> = bad.iter().map(resolve).collect::<Result<_, _>>()?;
        let mut trans = Vec::with_capacity(transitions.len());
        for (p, _) in &transitions {
            let mut t = Transition::new(resolve(&p.source)?, resolve(&p.target)?);
            t.guard = p.guard.clone();
            t.resets = p.resets.clone();
            trans.push(t);
        }
        let loc_tokens: Vec<Token> = locations.iter().map(|(_, t)| t.clone()).collect();
        let h = HybridAutomaton {
            name,
            vars: self.vars,
            locations: locations.into_iter().map(|(l, _)| l).collect(),
            transitions: trans,
            initial,
            bad,
        };
        if let Some(v) = h.validate().into_iter().next() {
            let at = match &v {
                Violation::FlowMissing { location, .. } | Violation::DuplicateFlow { location, .. } => {
                    index.get(location).map(|l| loc_tokens[l.0].clone())
                }
                Violation::InitialHasInvariant | Violation::InitialHasFlow => {
                    Some(loc_tokens[h.initial.0].clone())
                }
                Violation::TransitionIntoInitial(i)
                | Violation::DanglingTransition(i)
                | Violation::DuplicateReset { transition: i, .. } => {
                    Some(transitions[*i].1.clone())
                }
                Violation::BadRange(name) => h
                    .var_by_name(name)
                    .map(|v| var_tokens[v.0].clone()),
                _ => None,
            }
            .unwrap_or_default();
            return Err(err_at(&at, v.to_string()));
        }
        Ok(h)
    }

    fn location_body(&mut self, name: String) -> Result<Location, ParseError> {
        let mut loc = Location::new(name);
        self.expect(Tok::LBrace, "`{`")?;
        loop {
            if self.peek().tok == Tok::RBrace {
                self.bump();
                break;
            }
            let (section, st) = self.ident("`invariant`, `flow` or `}`")?;
            self.expect(Tok::Colon, "`:`")?;
            match section.as_str() {
                "invariant" => {
                    loc.invariant.extend(self.constraint_list()?);
                    self.expect(Tok::Semi, "`;`")?;
                }
                "flow" => {
                    // flow items run until `}` or the next `section:` header
                    while matches!(self.peek().tok, Tok::Ident(_))
                        && self.peek_at(1).tok != Tok::Colon
                    {
                        let (dname, dt) = self.ident("flow variable")?;
                        let var = dname
                            .strip_prefix('d')
                            .and_then(|v| self.var_id(v))
                            .ok_or_else(|| {
                                err_at(&dt, format!("`{dname}` does not name a declared variable's derivative"))
                            })?;
                        let flow = if self.at_keyword("in") {
                            self.bump();
                            Flow::Interval(self.interval()?)
                        } else {
                            self.expect(Tok::Eq, "`=` or `in`")?;
                            Flow::Expr(self.expr()?)
                        };
                        self.expect(Tok::Semi, "`;`")?;
                        loc.flows.push((var, flow));
                    }
                }
                _ => return Err(err_at(&st, "expected `invariant` or `flow`")),
            }
        }
        Ok(loc)
    }

    fn transition_body(&mut self, p: &mut PendingTransition) -> Result<(), ParseError> {
        self.expect(Tok::LBrace, "`{`")?;
        loop {
            if self.peek().tok == Tok::RBrace {
                self.bump();
                return Ok(());
            }
            let (section, st) = self.ident("`guard`, `reset` or `}`")?;
            self.expect(Tok::Colon, "`:`")?;
            match section.as_str() {
                "guard" => p.guard.extend(self.constraint_list()?),
                "reset" => {
                    while matches!(self.peek().tok, Tok::Ident(_)) {
                        let (vname, vt) = self.ident("variable")?;
                        let var = self
                            .var_id(&vname)
                            .ok_or_else(|| err_at(&vt, format!("unknown variable `{vname}`")))?;
                        self.expect(Tok::Assign, "`:=`")?;
                        let at = self.peek().clone();
                        let value = self
                            .expr()?
                            .constant_value()
                            .ok_or_else(|| err_at(&at, "reset value must be a constant"))?;
                        p.resets.push(Reset { var, value });
                        if self.peek().tok == Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                _ => return Err(err_at(&st, "expected `guard` or `reset`")),
            }
            self.expect(Tok::Semi, "`;`")?;
        }
    }

    fn var_id(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    fn constraint_list(&mut self) -> Result<Vec<LinearConstraint>, ParseError> {
        let mut out = Vec::new();
        if self.peek().tok == Tok::Semi {
            return Ok(out);
        }
        loop {
            out.push(self.constraint()?);
            if self.peek().tok == Tok::Comma {
                self.bump();
            } else {
                return Ok(out);
            }
        }
    }

    fn affine(&self, e: &Expr, at: &Token) -> Result<(Vec<f64>, f64), ParseError> {
        e.as_affine(self.vars.len()).ok_or_else(|| err_at(at, "constraint is not linear"))
    }

    fn constraint(&mut self) -> Result<LinearConstraint, ParseError> {
        let start = self.peek().clone();
        let first = self.expr()?;
        let op1 = self.bump();
        if !matches!(op1.tok, Tok::Le | Tok::Lt | Tok::Ge | Tok::Gt | Tok::EqEq) {
            return Err(err_at(&op1, "expected comparison operator"));
        }
        let second = self.expr()?;
        let nv = self.vars.len();
        let c = if matches!(self.peek().tok, Tok::Le | Tok::Lt | Tok::Ge | Tok::Gt) {
            let op2 = self.bump();
            let third = self.expr()?;
            let ascending = matches!(op1.tok, Tok::Le | Tok::Lt) && matches!(op2.tok, Tok::Le | Tok::Lt);
            let descending = matches!(op1.tok, Tok::Ge | Tok::Gt) && matches!(op2.tok, Tok::Ge | Tok::Gt);
            if !ascending && !descending {
                return Err(err_at(&op2, "chained comparison must point one way"));
            }
            let a = first.constant_value().ok_or_else(|| err_at(&start, "chain bound must be constant"))?;
            let b = third.constant_value().ok_or_else(|| err_at(&op2, "chain bound must be constant"))?;
            let (coeffs, k) = self.affine(&second, &op1)?;
            let (lo, hi, sl, su) = if ascending {
                (a - k, b - k, op1.tok == Tok::Lt, op2.tok == Tok::Lt)
            } else {
                (b - k, a - k, op2.tok == Tok::Gt, op1.tok == Tok::Gt)
            };
            LinearConstraint::new(to_pairs(coeffs), lo, hi).strict(sl, su)
        } else {
            let (cl, kl) = self.affine(&first, &start)?;
            let (cr, kr) = self.affine(&second, &op1)?;
            let coeffs: Vec<f64> = cl.iter().zip(&cr).map(|(a, b)| a - b).collect();
            let rhs = kr - kl;
            let pairs = to_pairs(coeffs);
            match op1.tok {
                Tok::Le => LinearConstraint::le(pairs, rhs),
                Tok::Lt => LinearConstraint::le(pairs, rhs).strict(false, true),
                Tok::Ge => LinearConstraint::ge(pairs, rhs),
                Tok::Gt => LinearConstraint::ge(pairs, rhs).strict(true, false),
                _ => LinearConstraint::new(pairs, rhs, rhs),
            }
        };
        let mut c = c.normalized();
        // leading coefficient positive, so `3 > x` reads back as `x < 3`
        if c.coeffs.first().is_some_and(|(_, a)| *a < 0.0) {
            for (_, a) in &mut c.coeffs {
                *a = -*a;
            }
            c = LinearConstraint {
                lower: -c.upper,
                upper: -c.lower,
                strict_lower: c.strict_upper,
                strict_upper: c.strict_lower,
                coeffs: c.coeffs,
            };
        }
        if c.coeffs.is_empty() {
            return Err(err_at(&start, "constraint mentions no variable"));
        }
        if c.lower > c.upper {
            return Err(err_at(&start, format!("constraint bounds [{}, {}] are empty", c.lower, c.upper)));
        }
        debug_assert!(c.coeffs.iter().all(|(v, _)| v.0 < nv));
        Ok(c)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(err_at(self.peek(), "expression nested too deeply"));
        }
        let out = self.additive();
        self.depth -= 1;
        out
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::add(lhs, self.multiplicative()?);
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::sub(lhs, self.multiplicative()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.power()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::mul(lhs, self.power()?);
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::div(lhs, self.power()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.unary()?;
        while self.peek().tok == Tok::Caret {
            self.bump();
            let at = self.peek().clone();
            let n = self.signed_number()?;
            if n.fract() != 0.0 || n.abs() > i32::MAX as f64 {
                return Err(err_at(&at, "exponent must be an integer"));
            }
            base = Expr::pow(base, n as i32);
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().tok {
            Tok::Minus => {
                self.bump();
                if let Tok::Num(v) = self.peek().tok {
                    self.bump();
                    return Ok(Expr::Const(-v));
                }
                self.depth += 1;
                if self.depth > MAX_NESTING {
                    return Err(err_at(self.peek(), "expression nested too deeply"));
                }
                let inner = self.unary();
                self.depth -= 1;
                Ok(Expr::neg(inner?))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(*v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                let func = match name.as_str() {
                    "sin" => Some(Expr::sin as fn(Expr) -> Expr),
                    "cos" => Some(Expr::cos as fn(Expr) -> Expr),
                    "exp" => Some(Expr::exp as fn(Expr) -> Expr),
                    _ => None,
                };
                if let (Some(f), Tok::LParen) = (func, &self.peek().tok) {
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(f(arg));
                }
                self.var_id(name)
                    .map(Expr::Var)
                    .ok_or_else(|| err_at(&t, format!("unknown variable `{name}`")))
            }
            _ => Err(err_at(&t, "expected expression")),
        }
    }
}

fn to_pairs(coeffs: Vec<f64>) -> Vec<(VarId, f64)> {
    coeffs.into_iter().enumerate().map(|(i, c)| (VarId(i), c)).collect()
}
