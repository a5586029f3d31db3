//! The abstraction refinement loop.
//!
//! 1. Abstract the automaton by interval rates over location boxes.
//! 2. Enumerate paths to a bad location breadth first, deciding each by LP
//!    and pruning infeasible prefixes. None feasible: safe up to the depth.
//! 3. Concretize the first feasible path's trace and replay it on the real
//!    dynamics with robustness margins. Validated: unsafe.
//! 4. Otherwise split one abstract location where the replay and the trace
//!    diverge, and go back to 2.

use std::collections::HashSet;
use std::hash::Hash;

use serde::Serialize;

use crate::abstraction::{build_lha, AbstractionError, EdgeKey};
use crate::lp::{check_path_feasible, check_path_feasible_with, EncodeOptions, PathCheck};
use crate::model::{HybridAutomaton, LocId, Path, Trace, TransId};
use crate::par::{map_ordered, Exec};
use crate::refinement::{
    checkpoint_distances, checkpoints, choose_split_constraint, fallback_split, first_exceeding, refine, statistics,
    Metric, Strategy,
};
use crate::report::{trace_to_json, TraceJson};
use crate::simulation::{shoot_path, validate_counterexample, SimConfig, ValidationResult};

/// Longest dwell tried per location when shooting a witness.
const SHOOT_HORIZON: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CegarConfig {
    pub max_iterations: usize,
    pub max_depth: usize,
    /// LP checks allowed per path search.
    pub max_paths: usize,
    pub strategy: Strategy,
    pub metric: Metric,
    pub sim: SimConfig,
    pub exec: Exec,
}

impl Default for CegarConfig {
    fn default() -> Self {
        CegarConfig {
            max_iterations: 50,
            max_depth: 12,
            max_paths: 200_000,
            strategy: Strategy::default(),
            metric: Metric::default(),
            sim: SimConfig::default(),
            exec: Exec::default(),
        }
    }
}

impl CegarConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.max_iterations == 0 || self.max_depth == 0 || self.max_paths == 0 {
            return Err("iteration, depth and path budgets must be positive".into());
        }
        if !(self.strategy.threshold > 0.0 && self.strategy.threshold.is_finite()) {
            return Err(format!("refinement threshold must be positive and finite, got {}", self.strategy.threshold));
        }
        self.sim.check()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CegarError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid automaton: {0}")]
    Model(String),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
}

/// Result of one breadth-first path search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub paths_checked: usize,
    pub cache_hits: usize,
    /// First LP-feasible path to a bad location with its trace.
    pub counterexample: Option<(Path, Trace)>,
    /// Every path to a bad location reached, feasible or not, in order.
    pub candidates: Vec<Path>,
    /// Paths whose LP failed numerically; they are kept, never pruned.
    pub inconclusive: usize,
    /// The path budget ran out.
    pub truncated: bool,
    /// Some feasible prefix was still extendable at the depth limit.
    pub depth_reached: bool,
}

/// Breadth-first search from the initial location, shortest paths first, ties
/// in transition order. Every path is LP-checked; infeasible ones are added
/// to `cache` and never extended, since extending a path only adds
/// constraints. With `stop_at_first` the search ends at the first feasible
/// path into a bad location.
pub fn search_paths<K, F>(
    lha: &HybridAutomaton,
    key: F,
    depth: usize,
    cache: &mut HashSet<Vec<K>>,
    exec: Exec,
    max_paths: usize,
    stop_at_first: bool,
) -> SearchOutcome
where
    K: Clone + Eq + Hash + Send + Sync,
    F: Fn(TransId) -> K,
{
    let mut out = SearchOutcome {
        paths_checked: 0,
        cache_hits: 0,
        counterexample: None,
        candidates: Vec::new(),
        inconclusive: 0,
        truncated: false,
        depth_reached: false,
    };
    let mut frontier: Vec<(Path, Vec<K>)> = vec![(Path::default(), Vec::new())];
    for level in 1..=depth {
        let mut level_paths = Vec::new();
        for (p, k) in &frontier {
            let at = p.transitions.last().map_or(lha.initial, |t| lha.transition(*t).target);
            for t in lha.outgoing(at) {
                let mut k2 = k.clone();
                k2.push(key(t));
                if cache.contains(&k2) {
                    out.cache_hits += 1;
                    continue;
                }
                let mut p2 = p.clone();
                p2.transitions.push(t);
                level_paths.push((p2, k2));
            }
        }
        if level_paths.is_empty() {
            return out;
        }
        if out.paths_checked + level_paths.len() > max_paths {
            out.truncated = true;
            return out;
        }
        let results = map_ordered(exec, &level_paths, |(p, _)| check_path_feasible(lha, p));
        let mut next = Vec::new();
        for ((p, k), r) in level_paths.into_iter().zip(results) {
            out.paths_checked += 1;
            let bad = lha.is_bad(lha.transition(*p.transitions.last().expect("nonempty")).target);
            match r {
                Ok(PathCheck::Infeasible) => {
                    cache.insert(k);
                    if bad {
                        out.candidates.push(p);
                    }
                }
                Ok(PathCheck::Feasible(tr)) if bad => {
                    out.candidates.push(p.clone());
                    if out.counterexample.is_none() {
                        out.counterexample = Some((p, tr));
                    }
                    if stop_at_first {
                        return out;
                    }
                }
                Ok(PathCheck::Feasible(_)) => next.push((p, k)),
                Err(_) => {
                    out.inconclusive += 1;
                    if bad {
                        out.candidates.push(p);
                    } else {
                        next.push((p, k));
                    }
                }
            }
        }
        if level == depth && !next.is_empty() {
            out.depth_reached = true;
        }
        frontier = next;
    }
    out
}

/// Paths from the initial location into a bad location, up to `depth` edges,
/// shortest first and in transition order. Extensions of LP-infeasible
/// prefixes are not enumerated.
pub fn enumerate_candidate_paths(lha: &HybridAutomaton, depth: usize, exec: Exec) -> Vec<Path> {
    let mut cache = HashSet::new();
    search_paths(lha, |t| t, depth, &mut cache, exec, usize::MAX, false).candidates
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownReason {
    MaxIterations,
    Stuck,
    Simulation,
    PathBudget,
    Lp,
}

impl UnknownReason {
    /// The name used in reports.
    pub fn as_str(self) -> &'static str {
        match self {
            UnknownReason::MaxIterations => "max_iterations",
            UnknownReason::Stuck => "stuck",
            UnknownReason::Simulation => "simulation",
            UnknownReason::PathBudget => "path_budget",
            UnknownReason::Lp => "lp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    /// Abstract location names along the path that produced it.
    pub abstract_path: Vec<String>,
    /// Concretized trace replayed on the automaton.
    pub trace: Trace,
    pub validation: ValidationResult,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// No feasible path to a bad location within `depth` edges. `complete`
    /// means no feasible path of any length exists.
    Safe { depth: usize, complete: bool },
    Unsafe(Box<Counterexample>),
    Unknown { reason: UnknownReason, detail: String },
}

/// One pass of the loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub index: usize,
    pub abstract_locations: usize,
    pub paths_checked: usize,
    pub cache_hits: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feasible_path: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// `D` at every checkpoint of the concretized trace.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub distances: Vec<f64>,
    /// Strategy statistic at every checkpoint.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub statistics: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined_location: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_constraint: Option<String>,
    pub fallback: bool,
    /// The validated witness was shot along the real dynamics.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub shot_witness: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub outcome: Outcome,
    pub iterations: Vec<IterationRecord>,
}

impl Verdict {
    pub fn is_safe(&self) -> bool {
        matches!(self.outcome, Outcome::Safe { .. })
    }

    pub fn is_unsafe(&self) -> bool {
        matches!(self.outcome, Outcome::Unsafe(_))
    }

    pub fn name(&self) -> &'static str {
        match self.outcome {
            Outcome::Safe { .. } => "safe",
            Outcome::Unsafe(_) => "unsafe",
            Outcome::Unknown { .. } => "unknown",
        }
    }
}

fn unknown(reason: UnknownReason, detail: impl Into<String>, iterations: Vec<IterationRecord>) -> Verdict {
    Verdict { outcome: Outcome::Unknown { reason, detail: detail.into() }, iterations }
}

/// Runs the loop on `h`. Analysis outcomes, including exhausted budgets, are
/// verdicts; only bad input is an error.
pub fn cegar_check(h: &HybridAutomaton, cfg: &CegarConfig) -> Result<Verdict, CegarError> {
    cfg.check().map_err(CegarError::Config)?;
    let violations = h.validate();
    if let Some(v) = violations.first() {
        return Err(CegarError::Model(v.to_string()));
    }
    let mut a = build_lha(h)?;
    let mut cache: HashSet<Vec<EdgeKey>> = HashSet::new();
    let mut log = Vec::new();
    if h.is_bad(h.initial) {
        let trace = Trace { path: Path::default(), steps: Vec::new() };
        let validation = validate_counterexample(h, &trace, &cfg.sim).map_err(|e| CegarError::Model(e.to_string()))?;
        let cex = Counterexample { abstract_path: vec![h.location(h.initial).name.clone()], trace, validation };
        return Ok(Verdict { outcome: Outcome::Unsafe(Box::new(cex)), iterations: log });
    }
    for index in 1..=cfg.max_iterations {
        let s = {
            let snapshot = &a;
            search_paths(&a.lha, |t| snapshot.edge_key(t), cfg.max_depth, &mut cache, cfg.exec, cfg.max_paths, true)
        };
        let mut rec = IterationRecord {
            index,
            abstract_locations: a.lha.locations.len(),
            paths_checked: s.paths_checked,
            cache_hits: s.cache_hits,
            feasible_path: None,
            validation: None,
            failure: None,
            distances: Vec::new(),
            statistics: Vec::new(),
            checkpoint: None,
            refined_location: None,
            split_constraint: None,
            fallback: false,
            shot_witness: false,
        };
        let Some((path, trace)) = s.counterexample else {
            log.push(rec);
            if s.truncated {
                return Ok(unknown(UnknownReason::PathBudget, format!("more than {} paths", cfg.max_paths), log));
            }
            if s.inconclusive > 0 {
                return Ok(unknown(UnknownReason::Lp, format!("{} path LPs failed numerically", s.inconclusive), log));
            }
            let outcome = Outcome::Safe { depth: cfg.max_depth, complete: !s.depth_reached };
            return Ok(Verdict { outcome, iterations: log });
        };
        let abstract_path = a.lha.path_names(&path);
        rec.feasible_path = Some(abstract_path.clone());

        // Prefer a witness that clears guards and invariants by a margin.
        let robust = EncodeOptions { margin: 2.0 * cfg.sim.eps_robust, ..EncodeOptions::default() };
        let witness = match check_path_feasible_with(&a.lha, &path, &robust) {
            Ok(PathCheck::Feasible(t)) => t,
            _ => trace,
        };
        let concrete = a.concretize_trace(&witness)?;
        let validation = match validate_counterexample(&a.origin, &concrete, &cfg.sim) {
            Ok(v) => v,
            Err(e) => {
                rec.validation = Some("error".into());
                log.push(rec);
                return Ok(unknown(UnknownReason::Simulation, e.to_string(), log));
            }
        };
        if validation.is_validated() {
            rec.validation = Some("validated".into());
            log.push(rec);
            let cex = Counterexample { abstract_path, trace: concrete, validation };
            return Ok(Verdict { outcome: Outcome::Unsafe(Box::new(cex)), iterations: log });
        }
        // The minimal-time witness follows the fastest rates, which nonlinear
        // dynamics rarely do; a witness shot along the real dynamics of the
        // same concrete path gets a replay too.
        let shot = concrete.steps.first().and_then(|s0| {
            shoot_path(&a.origin, &concrete.path, &s0.entry, &cfg.sim, 2.0 * cfg.sim.eps_robust, SHOOT_HORIZON)
        });
        if let Some(st) = shot {
            if let Ok(v) = validate_counterexample(&a.origin, &st, &cfg.sim) {
                if v.is_validated() {
                    rec.validation = Some("validated".into());
                    rec.shot_witness = true;
                    log.push(rec);
                    let cex = Counterexample { abstract_path, trace: st, validation: v };
                    return Ok(Verdict { outcome: Outcome::Unsafe(Box::new(cex)), iterations: log });
                }
            }
        }
        rec.validation = Some("refuted".into());
        let first = validation.first_failure().cloned();
        rec.failure = first.as_ref().map(|f| f.describe(&a.origin));

        let cps = checkpoints(&validation.trajectory, &concrete);
        let d = checkpoint_distances(&cps, cfg.metric);
        let stats = statistics(&d, cfg.strategy.kind);
        let chosen = first_exceeding(&stats, cfg.strategy.threshold);
        rec.distances = d;
        rec.statistics = stats;
        rec.checkpoint = chosen;
        let mut split: Option<(LocId, _)> =
            chosen.and_then(|i| choose_split_constraint(&a, cps[i].leaf, &cps[i]).ok().map(|c| (cps[i].leaf, c)));
        let mut next = split.as_ref().and_then(|(l, c)| refine(&a, *l, c).ok());
        if next.is_none() {
            rec.fallback = true;
            split = first.as_ref().and_then(|f| fallback_split(&a, &concrete, f));
            next = split.as_ref().and_then(|(l, c)| refine(&a, *l, c).ok());
        }
        let (Some((loc, c)), Some(refined)) = (split, next) else {
            log.push(rec);
            return Ok(unknown(UnknownReason::Stuck, "no location could be split", log));
        };
        rec.refined_location = Some(a.lha.location(loc).name.clone());
        rec.split_constraint = Some(c.display(&a.lha.var_names()).to_string());
        let node = a.tree.node_of(loc).expect("split location is a leaf");
        cache.retain(|k| !k.iter().any(|e| e.source == node || e.target == node));
        a = refined;
        log.push(rec);
    }
    Ok(unknown(UnknownReason::MaxIterations, format!("{} iterations", cfg.max_iterations), log))
}

#[derive(Serialize)]
struct TrajectorySummary {
    samples: usize,
    end_time: f64,
    jumps: serde_json::Value,
}

#[derive(Serialize)]
struct Report<'a> {
    verdict: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    complete: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<UnknownReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<&'a str>,
    iteration_count: usize,
    iterations: &'a [IterationRecord],
    #[serde(skip_serializing_if = "Option::is_none")]
    abstract_path: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<TraceJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory: Option<TrajectorySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    warnings: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory_csv_path: Option<&'a str>,
}

/// The verdict as a JSON document with a fixed field order.
pub fn report(v: &Verdict, h: &HybridAutomaton, trajectory_csv_path: Option<&str>) -> serde_json::Value {
    let mut r = Report {
        verdict: v.name(),
        depth: None,
        complete: None,
        reason: None,
        detail: None,
        iteration_count: v.iterations.len(),
        iterations: &v.iterations,
        abstract_path: None,
        trace: None,
        trajectory: None,
        warnings: None,
        trajectory_csv_path,
    };
    match &v.outcome {
        Outcome::Safe { depth, complete } => {
            r.depth = Some(*depth);
            r.complete = Some(*complete);
        }
        Outcome::Unknown { reason, detail } => {
            r.reason = Some(*reason);
            r.detail = Some(detail);
        }
        Outcome::Unsafe(c) => {
            r.abstract_path = Some(&c.abstract_path);
            r.trace = Some(trace_to_json(h, &c.trace));
            r.trajectory = Some(TrajectorySummary {
                samples: c.validation.trajectory.sample_count(),
                end_time: c.validation.trajectory.end_time(),
                jumps: c.validation.trajectory.jumps_json(h),
            });
            r.warnings = Some(&c.validation.warnings);
        }
    }
    serde_json::to_value(r).expect("report serializes")
}
