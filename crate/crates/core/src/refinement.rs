//! Choosing where and how to refine an abstraction after a spurious
//! counterexample.
//!
//! The guided trajectory and the concretized trace are compared at the trace's
//! checkpoints: the entry and exit instants of every step, where the trace
//! values are the LP's `lambda` and `gamma`. A strategy turns the distances
//! `D` at the checkpoints into one statistic per checkpoint; the first
//! checkpoint whose statistic exceeds the threshold names the abstract
//! location to split, and the variable contributing most to `D` there is
//! bisected.

use serde::Serialize;

use crate::abstraction::{Abstraction, AbstractionError};
use crate::model::{LinearConstraint, LocId, Trace, VarId};
use crate::simulation::{Failure, FailureKind, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Metric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Manhattan => diffs.sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// `|D(t_i)|`
    #[default]
    Abs,
    /// `|D'(t_i) - D'(t_{i-1})|`
    Diff,
    /// `|D'(t_i) / D'(t_{i-1})|`
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub threshold: f64,
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy { kind: StrategyKind::Abs, threshold: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RefineError {
    #[error("time {0} is outside the trace or the trajectory")]
    OutOfDomain(f64),
    #[error("checkpoint {0} has no predecessor")]
    NoPredecessor(usize),
    #[error("cannot split: {0}")]
    CannotSplit(String),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Entry,
    Exit,
}

/// A point where the trace value is known exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub time: f64,
    /// 1-based trace step.
    pub step: usize,
    pub kind: CheckpointKind,
    /// Abstract location the trace occupies at this instant.
    pub leaf: LocId,
    pub trace: Vec<f64>,
    pub trajectory: Vec<f64>,
}

/// Entry and exit checkpoints of every step the trajectory covers, in time
/// order.
pub fn checkpoints(traj: &Trajectory, tr: &Trace) -> Vec<Checkpoint> {
    let times = tr.entry_times();
    let mut out = Vec::with_capacity(2 * tr.steps.len());
    for (i, (step, seg)) in tr.steps.iter().zip(&traj.segments).enumerate() {
        let first_leaf = step.spans.first().map_or(step.location, |s| s.0);
        let last_leaf = step.spans.last().map_or(step.location, |s| s.0);
        out.push(Checkpoint {
            time: times[i],
            step: i + 1,
            kind: CheckpointKind::Entry,
            leaf: first_leaf,
            trace: step.entry.clone(),
            trajectory: seg.first().to_vec(),
        });
        out.push(Checkpoint {
            time: times[i] + step.dwell,
            step: i + 1,
            kind: CheckpointKind::Exit,
            leaf: last_leaf,
            trace: step.exit.clone(),
            trajectory: seg.last().to_vec(),
        });
    }
    out
}

/// Trace valuation at `t`, interpolated linearly within a step. At a jump
/// instant the exit value of the earlier step is used.
pub fn trace_state_at(tr: &Trace, t: f64) -> Option<Vec<f64>> {
    let mut start = 0.0;
    for s in &tr.steps {
        let end = start + s.dwell;
        if t >= start && t <= end {
            if t == end {
                return Some(s.exit.clone());
            }
            let w = if s.dwell > 0.0 { (t - start) / s.dwell } else { 0.0 };
            return Some(s.entry.iter().zip(&s.exit).map(|(a, b)| a + w * (b - a)).collect());
        }
        start = end;
    }
    None
}

/// `D(t)`: distance between trajectory and trace at time `t`.
pub fn distance_d(traj: &Trajectory, tr: &Trace, t: f64, m: Metric) -> Result<f64, RefineError> {
    let a = traj.state_at(t).ok_or(RefineError::OutOfDomain(t))?;
    let b = trace_state_at(tr, t).ok_or(RefineError::OutOfDomain(t))?;
    Ok(m.distance(&a, &b))
}

/// `D` at every checkpoint.
pub fn checkpoint_distances(cps: &[Checkpoint], m: Metric) -> Vec<f64> {
    cps.iter().map(|c| m.distance(&c.trajectory, &c.trace)).collect()
}

/// `D'(t_i) = D(t_i) - D(t_{i-1})` at checkpoint `i`.
pub fn distance_rate(d: &[f64], i: usize) -> Result<f64, RefineError> {
    if i == 0 || i >= d.len() {
        return Err(RefineError::NoPredecessor(i));
    }
    Ok(d[i] - d[i - 1])
}

/// Strategy statistic per checkpoint; `None` where it is undefined (too few
/// predecessors, or a zero denominator for the ratio).
pub fn statistics(d: &[f64], kind: StrategyKind) -> Vec<Option<f64>> {
    (0..d.len())
        .map(|i| match kind {
            StrategyKind::Abs => Some(d[i].abs()),
            StrategyKind::Diff | StrategyKind::Ratio if i < 2 => None,
            StrategyKind::Diff => Some(((d[i] - d[i - 1]) - (d[i - 1] - d[i - 2])).abs()),
            StrategyKind::Ratio => {
                let den = d[i - 1] - d[i - 2];
                (den != 0.0).then(|| ((d[i] - d[i - 1]) / den).abs())
            }
        })
        .collect()
}

/// Smallest index whose statistic exceeds the threshold.
pub fn first_exceeding(stats: &[Option<f64>], threshold: f64) -> Option<usize> {
    stats.iter().position(|s| s.is_some_and(|v| v > threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub checkpoint: usize,
    pub location: LocId,
}

/// Location to refine: the leaf at the first checkpoint whose statistic
/// exceeds the strategy threshold, or `None` if divergence stays below it.
pub fn choose_refinement_location(
    traj: &Trajectory,
    tr: &Trace,
    s: &Strategy,
    m: Metric,
) -> Option<Selection> {
    let cps = checkpoints(traj, tr);
    let d = checkpoint_distances(&cps, m);
    let i = first_exceeding(&statistics(&d, s.kind), s.threshold)?;
    Some(Selection { checkpoint: i, location: cps[i].leaf })
}

fn bisect(a: &Abstraction, loc: LocId, order: &[VarId]) -> Option<LinearConstraint> {
    let b = a.boxes.get(loc.0)?;
    order.iter().find_map(|v| {
        let iv = b.get(*v);
        let mid = iv.mid();
        (iv.lo < mid && mid < iv.hi).then(|| LinearConstraint::var_le(*v, mid))
    })
}

/// Bisects `loc`'s box along the variable contributing most to `D` at the
/// checkpoint (coordinate-wise absolute difference; ties go to the lower
/// index). Variables whose box is a point are passed over.
pub fn choose_split_constraint(a: &Abstraction, loc: LocId, cp: &Checkpoint) -> Result<LinearConstraint, RefineError> {
    let mut contrib: Vec<(VarId, f64)> =
        cp.trajectory.iter().zip(&cp.trace).enumerate().map(|(k, (x, y))| (VarId(k), (x - y).abs())).collect();
    contrib.retain(|(_, c)| *c > 0.0);
    if contrib.is_empty() {
        return Err(RefineError::CannotSplit("no variable contributes to the distance".into()));
    }
    contrib.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let order: Vec<VarId> = contrib.into_iter().map(|(v, _)| v).collect();
    bisect(a, loc, &order)
        .ok_or_else(|| RefineError::CannotSplit(format!("box of {} is degenerate", a.lha.location(loc).name)))
}

/// Split for a refuted trace whose divergence never exceeds the threshold:
/// the abstract location where the failed guard or invariant was checked,
/// bisected along the constraint's largest-coefficient variable.
pub fn fallback_split(a: &Abstraction, tr: &Trace, f: &Failure) -> Option<(LocId, LinearConstraint)> {
    let step = tr.steps.get(f.step.checked_sub(1)?)?;
    let (leaf, coeffs) = match &f.kind {
        FailureKind::Guard { transition, index } => {
            let c = a.origin.transition(*transition).guard.get(*index)?;
            (step.spans.last().map_or(step.location, |s| s.0), c.coeffs.clone())
        }
        FailureKind::Invariant { location, index } => {
            let c = a.origin.location(*location).invariant.get(*index)?;
            let start: f64 = tr.steps[..f.step - 1].iter().map(|s| s.dwell).sum();
            let mut at = start;
            let mut leaf = step.spans.last().map_or(step.location, |s| s.0);
            for (l, d) in &step.spans {
                if f.time <= at + d {
                    leaf = *l;
                    break;
                }
                at += d;
            }
            (leaf, c.coeffs.clone())
        }
        _ => return None,
    };
    let mut order = coeffs;
    order.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    let order: Vec<VarId> = order.into_iter().map(|(v, _)| v).collect();
    bisect(a, leaf, &order).map(|c| (leaf, c))
}

/// Applies the split; only the two children get new rate intervals.
pub fn refine(a: &Abstraction, loc: LocId, c: &LinearConstraint) -> Result<Abstraction, RefineError> {
    Ok(a.split(loc, c)?)
}
