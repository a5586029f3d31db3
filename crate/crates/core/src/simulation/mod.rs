//! Numerical simulation of concrete automata along a path.
//!
//! A run follows a fixed path with fixed dwell times: it integrates each
//! location's flows, checks the invariant at every sample, checks the guard
//! at every jump instant and applies resets. [`simulate_hybrid_path`] stops at
//! the first failure; [`guided_simulate`] and [`validate_counterexample`]
//! always finish the run and report every failure, because the deviations are
//! what drives refinement.

mod ode;
mod robust;

use std::fmt::Write;

use serde::Serialize;

use crate::model::{HybridAutomaton, LinearConstraint, LocId, Path, Trace, TraceStep, TransId};

pub use ode::{derivative, integrate_location, rk4, OdeError, Segment};
pub use robust::{
    check_structural_robustness, robust_satisfies, validate_counterexample, widen_equality, FlaggedGuard,
    StructuralReport, ValidationResult, ValidationVerdict,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// RK4 step.
    pub step: f64,
    /// Bound on the accumulated integration error estimate per dwell.
    pub eps_sim: f64,
    /// Robustness margin for guards and invariants during validation.
    pub eps_robust: f64,
    /// Total RK4 steps allowed for one run.
    pub max_steps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { step: 1e-3, eps_sim: 1e-6, eps_robust: 1e-4, max_steps: 50_000_000 }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(format!("step must be positive, got {}", self.step));
        }
        if !(self.eps_sim >= 0.0 && self.eps_sim <= self.eps_robust && self.eps_robust.is_finite()) {
            return Err(format!(
                "need 0 <= eps_sim <= eps_robust, got eps_sim = {}, eps_robust = {}",
                self.eps_sim, self.eps_robust
            ));
        }
        if self.max_steps == 0 {
            return Err("max_steps must be positive".into());
        }
        Ok(())
    }
}

/// Integration of one path step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    pub location: LocId,
    pub entry_time: f64,
    pub dwell: f64,
    /// `(absolute time, valuation)`
    pub samples: Vec<(f64, Vec<f64>)>,
    pub error_estimate: f64,
}

impl TrajectorySegment {
    pub fn first(&self) -> &[f64] {
        &self.samples[0].1
    }

    pub fn last(&self) -> &[f64] {
        &self.samples[self.samples.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub transition: TransId,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub segments: Vec<TrajectorySegment>,
    pub jumps: Vec<Jump>,
}

impl Trajectory {
    pub fn sample_count(&self) -> usize {
        self.segments.iter().map(|s| s.samples.len()).sum()
    }

    pub fn end_time(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.entry_time + s.dwell)
    }

    /// Valuation at absolute time `t`, linearly interpolated between samples.
    /// At a jump instant the pre-jump value is returned.
    pub fn state_at(&self, t: f64) -> Option<Vec<f64>> {
        let seg = self.segments.iter().find(|s| t >= s.entry_time && t <= s.entry_time + s.dwell)?;
        let k = seg.samples.partition_point(|(s, _)| *s < t);
        if k == 0 {
            return Some(seg.samples[0].1.clone());
        }
        if k == seg.samples.len() {
            return Some(seg.last().to_vec());
        }
        let (t0, a) = &seg.samples[k - 1];
        let (t1, b) = &seg.samples[k];
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
        Some(a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect())
    }

    /// `time,<vars>,location`, one row per sample.
    pub fn to_csv(&self, h: &HybridAutomaton) -> String {
        let mut out = String::from("time");
        for v in &h.vars {
            out.push(',');
            out.push_str(&v.name);
        }
        out.push_str(",location\n");
        for seg in &self.segments {
            let name = &h.location(seg.location).name;
            for (t, x) in &seg.samples {
                let _ = write!(out, "{t}");
                for v in x {
                    let _ = write!(out, ",{v}");
                }
                let _ = writeln!(out, ",{name}");
            }
        }
        out
    }

    pub fn jumps_json(&self, h: &HybridAutomaton) -> serde_json::Value {
        let rows: Vec<JumpRecord> = self
            .jumps
            .iter()
            .map(|j| {
                let tr = h.transition(j.transition);
                JumpRecord {
                    time: j.time,
                    transition: j.transition.0,
                    from: h.location(tr.source).name.clone(),
                    to: h.location(tr.target).name.clone(),
                    pre: valuation_json(h, &j.pre),
                    post: valuation_json(h, &j.post),
                }
            })
            .collect();
        serde_json::to_value(rows).expect("plain data serializes")
    }
}

#[derive(Serialize)]
struct JumpRecord {
    time: f64,
    transition: usize,
    from: String,
    to: String,
    pre: serde_json::Map<String, serde_json::Value>,
    post: serde_json::Map<String, serde_json::Value>,
}

/// `{name: value}` with keys in sorted order.
pub fn valuation_json(h: &HybridAutomaton, x: &[f64]) -> serde_json::Map<String, serde_json::Value> {
    h.vars.iter().zip(x).map(|(v, x)| (v.name.clone(), serde_json::json!(x))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum FailureKind {
    /// Guard `index` of `transition` failed just before the jump.
    Guard { transition: TransId, index: usize },
    /// Invariant `index` of `location` failed at a sample.
    Invariant { location: LocId, index: usize },
    /// The integration error estimate left the tube.
    Tube { estimate: f64 },
    /// The flows could not be evaluated; the run stops here.
    Evaluation(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub time: f64,
    /// 1-based path step during which the failure happened.
    pub step: usize,
    pub kind: FailureKind,
    pub valuation: Vec<f64>,
}

impl Failure {
    fn constraint<'a>(&self, h: &'a HybridAutomaton) -> Option<&'a LinearConstraint> {
        match self.kind {
            FailureKind::Guard { transition, index } => h.transition(transition).guard.get(index),
            FailureKind::Invariant { location, index } => h.location(location).invariant.get(index),
            _ => None,
        }
    }

    pub fn describe(&self, h: &HybridAutomaton) -> String {
        let names = h.var_names();
        match &self.kind {
            FailureKind::Guard { transition, .. } => {
                let tr = h.transition(*transition);
                format!(
                    "guard `{}` of {} -> {} fails at t = {}",
                    self.constraint(h).map(|c| c.display(&names).to_string()).unwrap_or_default(),
                    h.location(tr.source).name,
                    h.location(tr.target).name,
                    self.time
                )
            }
            FailureKind::Invariant { location, .. } => format!(
                "invariant `{}` of {} fails at t = {}",
                self.constraint(h).map(|c| c.display(&names).to_string()).unwrap_or_default(),
                h.location(*location).name,
                self.time
            ),
            FailureKind::Tube { estimate } => {
                format!("integration error estimate {estimate:e} leaves the tube at t = {}", self.time)
            }
            FailureKind::Evaluation(e) => format!("{e} at t = {}", self.time),
        }
    }

    pub fn to_json(&self, h: &HybridAutomaton) -> serde_json::Value {
        let names = h.var_names();
        let (kind, constraint, margin) = match &self.kind {
            FailureKind::Guard { .. } => ("guard", self.constraint(h), true),
            FailureKind::Invariant { .. } => ("invariant", self.constraint(h), true),
            FailureKind::Tube { .. } => ("tube", None, false),
            FailureKind::Evaluation(_) => ("evaluation", None, false),
        };
        let mut m = serde_json::Map::new();
        m.insert("kind".into(), kind.into());
        m.insert("time".into(), self.time.into());
        m.insert("step".into(), self.step.into());
        m.insert("message".into(), self.describe(h).into());
        m.insert("valuation".into(), valuation_json(h, &self.valuation).into());
        if let Some(c) = constraint {
            m.insert("constraint".into(), c.display(&names).to_string().into());
            if margin {
                m.insert("margin".into(), (c.margin(&self.valuation) / c.norm()).into());
            }
        }
        if let FailureKind::Guard { transition, .. } = self.kind {
            m.insert("transition".into(), transition.0.into());
        }
        if let FailureKind::Invariant { location, .. } = self.kind {
            m.insert("location".into(), h.location(location).name.clone().into());
        }
        serde_json::Value::Object(m)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// First failure of a run that stops on failure, with the partial trajectory.
    #[error("simulation failed")]
    Failed { failure: Box<Failure>, trajectory: Trajectory },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    StopAtFirst,
    Collect,
}

struct Run<'a> {
    h: &'a HybridAutomaton,
    eps: f64,
    mode: Mode,
    traj: Trajectory,
    failures: Vec<Failure>,
}

impl Run<'_> {
    /// Records a failure; `true` means the run must stop.
    fn fail(&mut self, f: Failure) -> bool {
        let fatal = matches!(f.kind, FailureKind::Evaluation(_));
        self.failures.push(f);
        fatal || self.mode == Mode::StopAtFirst
    }

    fn check_all(&mut self, step: usize, time: f64, x: &[f64], cs: &[LinearConstraint], kind: impl Fn(usize) -> FailureKind, seen: &mut [bool]) -> bool {
        for (j, c) in cs.iter().enumerate() {
            if !seen[j] && !robust_satisfies(c, x, self.eps) {
                seen[j] = true;
                if self.fail(Failure { time, step, kind: kind(j), valuation: x.to_vec() }) {
                    return true;
                }
            }
        }
        false
    }

    fn go(&mut self, path: &Path, x0: &[f64], durations: &[f64], cfg: &SimConfig) {
        let h = self.h;
        let mut x = match path.transitions.first() {
            Some(t) => h.transition(*t).apply_resets(x0),
            None => return,
        };
        let mut time = 0.0;
        let mut budget = cfg.max_steps;
        for (idx, (tid, &dwell)) in path.transitions.iter().zip(durations).enumerate() {
            let step = idx + 1;
            let tr = h.transition(*tid);
            if idx > 0 {
                let mut seen = vec![false; tr.guard.len()];
                let stop = self.check_all(
                    idx,
                    time,
                    &x,
                    &tr.guard,
                    |index| FailureKind::Guard { transition: *tid, index },
                    &mut seen,
                );
                if stop {
                    return;
                }
                let post = tr.apply_resets(&x);
                self.traj.jumps.push(Jump { time, transition: *tid, pre: x, post: post.clone() });
                x = post;
            }
            let loc = h.location(tr.target);
            let seg = match ode::integrate(&loc.flows, &x, dwell, cfg, &mut budget, false) {
                Ok(s) => s,
                Err(e) => {
                    let valuation = x.clone();
                    self.fail(Failure { time, step, kind: FailureKind::Evaluation(e.to_string()), valuation });
                    return;
                }
            };
            let samples: Vec<(f64, Vec<f64>)> = seg.samples.into_iter().map(|(t, v)| (time + t, v)).collect();
            let mut seen = vec![false; loc.invariant.len()];
            let mut stop = false;
            for (t, v) in &samples {
                let target = tr.target;
                if self.check_all(step, *t, v, &loc.invariant, |index| FailureKind::Invariant { location: target, index }, &mut seen) {
                    stop = true;
                    break;
                }
            }
            x = samples.last().expect("at least one sample").1.clone();
            self.traj.segments.push(TrajectorySegment {
                location: tr.target,
                entry_time: time,
                dwell,
                samples,
                error_estimate: seg.error_estimate,
            });
            if stop {
                return;
            }
            if seg.error_estimate > cfg.eps_sim {
                let f = Failure {
                    time: time + seg.tube_exit.unwrap_or(dwell),
                    step,
                    kind: FailureKind::Tube { estimate: seg.error_estimate },
                    valuation: x.clone(),
                };
                if self.fail(f) {
                    return;
                }
            }
            time += dwell;
        }
    }
}

fn preconditions(h: &HybridAutomaton, path: &Path, x0: &[f64], durations: &[f64], cfg: &SimConfig) -> Result<(), SimError> {
    cfg.check().map_err(SimError::Precondition)?;
    if !h.path_exists(path) {
        return Err(SimError::Precondition("path does not exist in the automaton".into()));
    }
    if durations.len() != path.len() {
        return Err(SimError::Precondition(format!(
            "{} durations given for a path of {} steps",
            durations.len(),
            path.len()
        )));
    }
    if let Some(d) = durations.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(SimError::Precondition(format!("invalid duration {d}")));
    }
    if x0.len() != h.nvars() {
        return Err(SimError::Precondition(format!("initial valuation has {} values, expected {}", x0.len(), h.nvars())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Precondition("initial valuation is not finite".into()));
    }
    Ok(())
}

fn run(
    h: &HybridAutomaton,
    path: &Path,
    x0: &[f64],
    durations: &[f64],
    cfg: &SimConfig,
    eps: f64,
    mode: Mode,
) -> Result<(Trajectory, Vec<Failure>), SimError> {
    preconditions(h, path, x0, durations, cfg)?;
    let mut r = Run { h, eps, mode, traj: Trajectory::default(), failures: Vec::new() };
    r.go(path, x0, durations, cfg);
    Ok((r.traj, r.failures))
}

/// Simulates `path` from `x0` (the valuation on entering the first location;
/// resets of the first edge are applied to it) dwelling `durations[i]` in the
/// i-th location. Guards and invariants are checked plainly; the first
/// failure ends the run with [`SimError::Failed`].
pub fn simulate_hybrid_path(
    h: &HybridAutomaton,
    path: &Path,
    x0: &[f64],
    durations: &[f64],
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    preconditions(h, path, x0, durations, cfg)?;
    if let Some(t) = path.transitions.first() {
        let tr = h.transition(*t);
        let start = tr.apply_resets(x0);
        if let Some(c) = h.location(tr.target).invariant.iter().find(|c| !c.is_satisfied(&start)) {
            return Err(SimError::Precondition(format!(
                "initial valuation violates `{}` of {}",
                c.display(&h.var_names()),
                h.location(tr.target).name
            )));
        }
    }
    let (trajectory, mut failures) = run(h, path, x0, durations, cfg, 0.0, Mode::StopAtFirst)?;
    match failures.pop() {
        None => Ok(trajectory),
        Some(f) => Err(SimError::Failed { failure: Box::new(f), trajectory }),
    }
}

/// Outcome of a run that never stops early.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedRun {
    pub trajectory: Trajectory,
    /// First failure of each guard and invariant, in time order.
    pub failures: Vec<Failure>,
}

fn trace_inputs(h: &HybridAutomaton, tr: &Trace) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    if tr.steps.len() != tr.path.len() {
        return Err(SimError::Precondition("trace needs one step per transition".into()));
    }
    for (s, t) in tr.steps.iter().zip(&tr.path.transitions) {
        if h.transitions.get(t.0).is_some_and(|tr| tr.target != s.location) {
            return Err(SimError::Precondition("trace locations do not follow its path".into()));
        }
        if s.entry.len() != h.nvars() || s.exit.len() != h.nvars() {
            return Err(SimError::Precondition("trace valuations have the wrong dimension".into()));
        }
    }
    let x0 = tr.steps.first().map_or_else(|| vec![0.0; h.nvars()], |s| s.entry.clone());
    Ok((x0, tr.steps.iter().map(|s| s.dwell).collect()))
}

pub(super) fn guided(h: &HybridAutomaton, tr: &Trace, cfg: &SimConfig, eps: f64) -> Result<GuidedRun, SimError> {
    let (x0, durations) = trace_inputs(h, tr)?;
    let (trajectory, mut failures) = run(h, &tr.path, &x0, &durations, cfg, eps, Mode::Collect)?;
    failures.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.step.cmp(&b.step)));
    Ok(GuidedRun { trajectory, failures })
}

/// Runs the concrete automaton along a concretized trace: same path, same
/// dwell times, starting from the trace's first entry valuation. Plain
/// guard and invariant failures are collected, not fatal.
pub fn guided_simulate(h: &HybridAutomaton, tr: &Trace, cfg: &SimConfig) -> Result<GuidedRun, SimError> {
    guided(h, tr, cfg, 0.0)
}

/// Builds a trace of `path` from the real dynamics: starting at `entry`
/// (the valuation after the first edge), each location is left at the first
/// integration sample where every guard of the next edge holds with margin
/// `margin`, and the last location is left at once. `None` when an invariant
/// breaks first, a location is not left within `horizon` time units, or the
/// flows cannot be evaluated.
pub fn shoot_path(h: &HybridAutomaton, path: &Path, entry: &[f64], cfg: &SimConfig, margin: f64, horizon: f64) -> Option<Trace> {
    if path.is_empty() || entry.len() != h.nvars() || cfg.check().is_err() || !h.path_exists(path) {
        return None;
    }
    let mut steps = Vec::with_capacity(path.len());
    let mut x = entry.to_vec();
    for (i, t) in path.transitions.iter().enumerate() {
        let location = h.transition(*t).target;
        let loc = h.location(location);
        if i > 0 {
            x = h.transition(*t).apply_resets(&x);
        }
        let inside = |x: &[f64]| loc.invariant.iter().all(|c| c.is_satisfied(x));
        if !inside(&x) {
            return None;
        }
        let start = x.clone();
        let mut k = 0usize;
        if let Some(next) = path.transitions.get(i + 1) {
            let guard = &h.transition(*next).guard;
            while !guard.iter().all(|g| robust_satisfies(g, &x, margin)) {
                k += 1;
                if k as f64 * cfg.step > horizon {
                    return None;
                }
                x = ode::rk4_step(&loc.flows, &x, cfg.step).ok()?;
                if x.iter().any(|v| !v.is_finite()) || !inside(&x) {
                    return None;
                }
            }
        }
        let dwell = k as f64 * cfg.step;
        steps.push(TraceStep { location, dwell, entry: start, exit: x.clone(), spans: vec![(location, dwell)] });
    }
    Some(Trace { path: path.clone(), steps })
}
