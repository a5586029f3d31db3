//! Hybrid automaton data model: variables, linear constraints, locations,
//! transitions, paths and traces.
//!
//! The same types describe both concrete automata (flows are arbitrary
//! expressions) and linear hybrid automata (flows are rate intervals). An
//! automaton has exactly one initial location; it carries no invariant and no
//! flows, and the resets on its outgoing edges establish the initial state.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::expr::{EvalError, Expr};
use crate::interval::{Interval, StateBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransId(pub usize);

/// A state variable with its declared global range.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub range: Interval,
}

/// `lower <= sum c_i x_i <= upper`, either bound possibly infinite or strict.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<(VarId, f64)>,
    pub lower: f64,
    pub upper: f64,
    pub strict_lower: bool,
    pub strict_upper: bool,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<(VarId, f64)>, lower: f64, upper: f64) -> Self {
        LinearConstraint { coeffs, lower, upper, strict_lower: false, strict_upper: false }
    }

    /// `sum c_i x_i <= b`
    pub fn le(coeffs: Vec<(VarId, f64)>, b: f64) -> Self {
        Self::new(coeffs, f64::NEG_INFINITY, b)
    }

    /// `sum c_i x_i >= a`
    pub fn ge(coeffs: Vec<(VarId, f64)>, a: f64) -> Self {
        Self::new(coeffs, a, f64::INFINITY)
    }

    pub fn strict(mut self, lower: bool, upper: bool) -> Self {
        self.strict_lower = lower;
        self.strict_upper = upper;
        self
    }

    /// Single-variable bound `x <= b`.
    pub fn var_le(v: VarId, b: f64) -> Self {
        Self::le(vec![(v, 1.0)], b)
    }

    /// Single-variable bound `x >= a`.
    pub fn var_ge(v: VarId, a: f64) -> Self {
        Self::ge(vec![(v, 1.0)], a)
    }

    pub fn value(&self, val: &[f64]) -> f64 {
        self.coeffs.iter().map(|(v, c)| c * val[v.0]).sum()
    }

    /// Signed distance to the nearest finite bound, in units of the
    /// constraint's linear form. Nonnegative iff the closed constraint holds.
    pub fn margin(&self, val: &[f64]) -> f64 {
        let s = self.value(val);
        let mut m = f64::INFINITY;
        if self.upper.is_finite() {
            m = m.min(self.upper - s);
        }
        if self.lower.is_finite() {
            m = m.min(s - self.lower);
        }
        m
    }

    pub fn is_satisfied(&self, val: &[f64]) -> bool {
        let s = self.value(val);
        let up = if self.strict_upper { s < self.upper } else { s <= self.upper };
        let lo = if self.strict_lower { s > self.lower } else { s >= self.lower };
        up && lo
    }

    /// Euclidean norm of the coefficient vector.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|(_, c)| c * c).sum::<f64>().sqrt()
    }

    pub fn is_one_sided(&self) -> bool {
        self.lower.is_finite() != self.upper.is_finite()
    }

    /// Closed complement of a one-sided constraint: `a <= s` becomes `s <= a`
    /// and vice versa. Two-sided constraints have no single-constraint complement.
    pub fn closed_complement(&self) -> Option<LinearConstraint> {
        if !self.is_one_sided() {
            return None;
        }
        Some(if self.upper.is_finite() {
            LinearConstraint::ge(self.coeffs.clone(), self.upper)
        } else {
            LinearConstraint::le(self.coeffs.clone(), self.lower)
        })
    }

    /// Merges repeated variables, drops zero coefficients and sorts by variable.
    pub fn normalized(mut self) -> Self {
        self.coeffs.sort_by_key(|(v, _)| *v);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(self.coeffs.len());
        for (v, c) in self.coeffs {
            match merged.last_mut() {
                Some((w, d)) if *w == v => *d += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        self.coeffs = merged;
        self
    }

    /// Structural problems with this constraint, if any.
    pub fn defect(&self, nvars: usize) -> Option<String> {
        if self.coeffs.iter().all(|(_, c)| *c == 0.0) {
            return Some("constraint has no nonzero coefficient".into());
        }
        if let Some((v, _)) = self.coeffs.iter().find(|(v, _)| v.0 >= nvars) {
            return Some(format!("unknown variable v{}", v.0));
        }
        if self.coeffs.iter().any(|(_, c)| !c.is_finite()) {
            return Some("non-finite coefficient".into());
        }
        if self.lower.is_nan() || self.upper.is_nan() || self.lower > self.upper {
            return Some(format!("empty bounds [{}, {}]", self.lower, self.upper));
        }
        if self.lower == f64::INFINITY || self.upper == f64::NEG_INFINITY {
            return Some("bound at the wrong infinity".into());
        }
        None
    }

    pub fn display<'a>(&'a self, names: &'a [String]) -> ConstraintDisplay<'a> {
        ConstraintDisplay { c: self, names }
    }
}

pub struct ConstraintDisplay<'a> {
    c: &'a LinearConstraint,
    names: &'a [String],
}

impl fmt::Display for ConstraintDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.c;
        let mut lhs = String::new();
        for (i, (v, k)) in c.coeffs.iter().enumerate() {
            let name = self.names.get(v.0).cloned().unwrap_or_else(|| format!("v{}", v.0));
            let (sign, mag) = if *k < 0.0 { ("-", -k) } else { ("+", *k) };
            if i == 0 {
                if sign == "-" {
                    lhs.push('-');
                }
            } else {
                lhs.push_str(&format!(" {sign} "));
            }
            if mag == 1.0 {
                lhs.push_str(&name);
            } else {
                lhs.push_str(&format!("{mag} * {name}"));
            }
        }
        let lo_op = if c.strict_lower { "<" } else { "<=" };
        let hi_op = if c.strict_upper { "<" } else { "<=" };
        match (c.lower.is_finite(), c.upper.is_finite()) {
            (true, true) => write!(f, "{} {lo_op} {lhs} {hi_op} {}", c.lower, c.upper),
            (false, true) => write!(f, "{lhs} {hi_op} {}", c.upper),
            (true, false) => {
                let op = if c.strict_lower { ">" } else { ">=" };
                write!(f, "{lhs} {op} {}", c.lower)
            }
            (false, false) => write!(f, "-inf <= {lhs} <= inf"),
        }
    }
}

/// Constant reset `x := c` on a transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reset {
    pub var: VarId,
    pub value: f64,
}

/// Per-variable dynamics of a location.
#[derive(Debug, Clone, PartialEq)]
pub enum Flow {
    /// `dx = f(x, ...)`
    Expr(Expr),
    /// `dx in [a, b]`
    Interval(Interval),
}

impl Flow {
    /// The rate interval if this flow is linear: an explicit interval or a
    /// constant expression.
    pub fn as_rate(&self) -> Option<Interval> {
        match self {
            Flow::Interval(i) => Some(*i),
            Flow::Expr(e) => e.constant_value().map(Interval::point),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub name: String,
    pub invariant: Vec<LinearConstraint>,
    pub flows: Vec<(VarId, Flow)>,
}

impl Location {
    pub fn new(name: impl Into<String>) -> Self {
        Location { name: name.into(), invariant: Vec::new(), flows: Vec::new() }
    }

    pub fn flow(&self, v: VarId) -> Option<&Flow> {
        self.flows.iter().find(|(w, _)| *w == v).map(|(_, f)| f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub source: LocId,
    pub target: LocId,
    pub guard: Vec<LinearConstraint>,
    pub resets: Vec<Reset>,
}

impl Transition {
    pub fn new(source: LocId, target: LocId) -> Self {
        Transition { source, target, guard: Vec::new(), resets: Vec::new() }
    }

    pub fn reset_of(&self, v: VarId) -> Option<f64> {
        self.resets.iter().find(|r| r.var == v).map(|r| r.value)
    }

    /// Applies the resets to a valuation; other variables keep their values.
    pub fn apply_resets(&self, val: &[f64]) -> Vec<f64> {
        let mut out = val.to_vec();
        for r in &self.resets {
            out[r.var.0] = r.value;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridAutomaton {
    pub name: String,
    pub vars: Vec<Variable>,
    pub locations: Vec<Location>,
    pub transitions: Vec<Transition>,
    pub initial: LocId,
    pub bad: BTreeSet<LocId>,
}

/// One structural defect found by [`HybridAutomaton::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateVariable(String),
    BadRange(String),
    DuplicateLocation(String),
    MissingInitial,
    InitialHasInvariant,
    InitialHasFlow,
    FlowMissing { location: String, var: String },
    DuplicateFlow { location: String, var: String },
    UnknownVariable { context: String },
    BadRateInterval { location: String, var: String },
    MalformedConstraint { context: String, reason: String },
    DanglingTransition(usize),
    TransitionIntoInitial(usize),
    DuplicateReset { transition: usize, var: String },
    UnknownBadLocation,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateVariable(v) => write!(f, "variable {v} declared twice"),
            Violation::BadRange(v) => write!(f, "range of {v} is empty or not finite"),
            Violation::DuplicateLocation(l) => write!(f, "location {l} declared twice"),
            Violation::MissingInitial => write!(f, "initial location does not exist"),
            Violation::InitialHasInvariant => write!(f, "initial location has an invariant"),
            Violation::InitialHasFlow => write!(f, "initial location has flows"),
            Violation::FlowMissing { location, var } => {
                write!(f, "flow missing for {var} in location {location}")
            }
            Violation::DuplicateFlow { location, var } => {
                write!(f, "duplicate flow for {var} in location {location}")
            }
            Violation::UnknownVariable { context } => write!(f, "unknown variable in {context}"),
            Violation::BadRateInterval { location, var } => {
                write!(f, "rate interval for {var} in location {location} is empty")
            }
            Violation::MalformedConstraint { context, reason } => write!(f, "{context}: {reason}"),
            Violation::DanglingTransition(i) => {
                write!(f, "transition {i} references a missing location")
            }
            Violation::TransitionIntoInitial(i) => {
                write!(f, "transition {i}: transition into initial location")
            }
            Violation::DuplicateReset { transition, var } => {
                write!(f, "transition {transition} resets {var} twice")
            }
            Violation::UnknownBadLocation => write!(f, "bad set references a missing location"),
        }
    }
}

/// A path: the transitions taken from the initial location, in order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Path {
    pub transitions: Vec<TransId>,
}

impl Path {
    pub fn new(transitions: Vec<TransId>) -> Self {
        Path { transitions }
    }

    /// Number of non-initial locations visited.
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// One dwell of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub location: LocId,
    pub dwell: f64,
    /// Valuation on entry, after the incoming edge's resets.
    pub entry: Vec<f64>,
    /// Valuation when leaving, before the outgoing edge fires.
    pub exit: Vec<f64>,
    /// Abstract locations and dwell times merged into this step. A trace read
    /// straight off an abstraction has exactly one span per step.
    pub spans: Vec<(LocId, f64)>,
}

/// A feasible timed witness for a path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub path: Path,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    /// Absolute time at which each step is entered.
    pub fn entry_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.steps
            .iter()
            .map(|s| {
                let at = t;
                t += s.dwell;
                at
            })
            .collect()
    }

    pub fn total_time(&self) -> f64 {
        self.steps.iter().map(|s| s.dwell).sum()
    }
}

impl HybridAutomaton {
    pub fn var_names(&self) -> Vec<String> {
        self.vars.iter().map(|v| v.name.clone()).collect()
    }

    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn location_by_name(&self, name: &str) -> Option<LocId> {
        self.locations.iter().position(|l| l.name == name).map(LocId)
    }

    pub fn location(&self, id: LocId) -> &Location {
        &self.locations[id.0]
    }

    pub fn transition(&self, id: TransId) -> &Transition {
        &self.transitions[id.0]
    }

    pub fn is_bad(&self, id: LocId) -> bool {
        self.bad.contains(&id)
    }

    /// Outgoing transitions of `loc` in declaration order.
    pub fn outgoing(&self, loc: LocId) -> impl Iterator<Item = TransId> + '_ {
        self.transitions
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.source == loc)
            .map(|(i, _)| TransId(i))
    }

    /// The declared global ranges as a box.
    pub fn ranges(&self) -> StateBox {
        StateBox(self.vars.iter().map(|v| v.range).collect())
    }

    /// Every structural defect; an empty list means the automaton is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let nvars = self.vars.len();
        let mut seen = BTreeSet::new();
        for v in &self.vars {
            if !seen.insert(v.name.as_str()) {
                out.push(Violation::DuplicateVariable(v.name.clone()));
            }
            let r = v.range;
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                out.push(Violation::BadRange(v.name.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for l in &self.locations {
            if !seen.insert(l.name.as_str()) {
                out.push(Violation::DuplicateLocation(l.name.clone()));
            }
        }
        let init_ok = self.initial.0 < self.locations.len();
        if !init_ok {
            out.push(Violation::MissingInitial);
        }
        let var_name = |v: VarId| {
            self.vars.get(v.0).map(|x| x.name.clone()).unwrap_or_else(|| format!("v{}", v.0))
        };
        for (li, l) in self.locations.iter().enumerate() {
            for c in &l.invariant {
                if let Some(reason) = c.defect(nvars) {
                    out.push(Violation::MalformedConstraint {
                        context: format!("invariant of {}", l.name),
                        reason,
                    });
                }
            }
            if init_ok && li == self.initial.0 {
                if !l.invariant.is_empty() {
                    out.push(Violation::InitialHasInvariant);
                }
                if !l.flows.is_empty() {
                    out.push(Violation::InitialHasFlow);
                }
                continue;
            }
            let mut counts = vec![0usize; nvars];
            for (v, flow) in &l.flows {
                if v.0 >= nvars {
                    out.push(Violation::UnknownVariable { context: format!("flow of {}", l.name) });
                    continue;
                }
                counts[v.0] += 1;
                match flow {
                    Flow::Interval(i) if !i.is_valid() => out.push(Violation::BadRateInterval {
                        location: l.name.clone(),
                        var: var_name(*v),
                    }),
                    Flow::Expr(e) => {
                        let mut unknown = false;
                        e.for_each_var(&mut |w| unknown |= w.0 >= nvars);
                        if unknown {
                            out.push(Violation::UnknownVariable {
                                context: format!("flow of {} in {}", var_name(*v), l.name),
                            });
                        }
                    }
                    _ => {}
                }
            }
            for (k, n) in counts.iter().enumerate() {
                let var = self.vars[k].name.clone();
                match n {
                    0 => out.push(Violation::FlowMissing { location: l.name.clone(), var }),
                    1 => {}
                    _ => out.push(Violation::DuplicateFlow { location: l.name.clone(), var }),
                }
            }
        }
        for (ti, t) in self.transitions.iter().enumerate() {
            if t.source.0 >= self.locations.len() || t.target.0 >= self.locations.len() {
                out.push(Violation::DanglingTransition(ti));
                continue;
            }
            if t.target == self.initial {
                out.push(Violation::TransitionIntoInitial(ti));
            }
            for c in &t.guard {
                if let Some(reason) = c.defect(nvars) {
                    out.push(Violation::MalformedConstraint {
                        context: format!("guard of transition {ti}"),
                        reason,
                    });
                }
            }
            let mut reset_vars = BTreeSet::new();
            for r in &t.resets {
                if r.var.0 >= nvars {
                    out.push(Violation::UnknownVariable {
                        context: format!("reset of transition {ti}"),
                    });
                } else if !reset_vars.insert(r.var) {
                    out.push(Violation::DuplicateReset { transition: ti, var: var_name(r.var) });
                }
            }
        }
        if self.bad.iter().any(|b| b.0 >= self.locations.len()) {
            out.push(Violation::UnknownBadLocation);
        }
        out
    }

    /// True iff every non-initial flow is a rate interval or a constant.
    pub fn is_linear(&self) -> bool {
        self.locations.iter().all(|l| l.flows.iter().all(|(_, f)| f.as_rate().is_some()))
    }

    /// True iff the path starts at the initial location and its transitions chain.
    pub fn path_exists(&self, path: &Path) -> bool {
        let mut at = self.initial;
        for t in &path.transitions {
            match self.transitions.get(t.0) {
                Some(tr) if tr.source == at => at = tr.target,
                _ => return false,
            }
        }
        true
    }

    /// Locations visited by an existing path, starting with the initial one.
    pub fn path_locations(&self, path: &Path) -> Vec<LocId> {
        let mut out = vec![self.initial];
        out.extend(path.transitions.iter().map(|t| self.transitions[t.0].target));
        out
    }

    /// Human-readable `a -> b -> c` rendering.
    pub fn path_names(&self, path: &Path) -> Vec<String> {
        self.path_locations(path).iter().map(|l| self.location(*l).name.clone()).collect()
    }

    /// Evaluates every flow of a location at a point.
    pub fn eval_flows(&self, loc: LocId, val: &[f64]) -> Result<Vec<f64>, EvalError> {
        let l = self.location(loc);
        let mut out = vec![0.0; self.nvars()];
        for (v, f) in &l.flows {
            out[v.0] = match f {
                Flow::Expr(e) => e.eval(val)?,
                Flow::Interval(i) => i.mid(),
            };
        }
        Ok(out)
    }
}
