//! Path feasibility by linear programming.
//!
//! A path `v_I -> v_1 -> ... -> v_n` of a linear hybrid automaton is feasible
//! iff there are dwell times `t_i >= 0`, entry valuations `lambda_{i-1}` and
//! exit valuations `gamma_i` such that every rate, invariant, guard and reset
//! along the path is respected. With constant rate intervals all of these are
//! linear, so one LP decides the question and its solution is a trace.

mod encode;
mod simplex;

use std::fmt::Write;

pub use encode::{check_path_feasible, check_path_feasible_with, encode_path, encode_path_with, extract_trace, EncodeOptions, PathCheck};
pub use simplex::FEAS_TOL;

/// What an LP column stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpVarKind {
    /// `t_i`, dwell in the i-th visited location (1-based)
    Dwell { step: usize },
    /// `gamma_i(x_k)`, value of `x_k` when leaving the i-th location
    Exit { step: usize, var: usize },
    /// `lambda_i(x_k)`, value of `x_k` after the resets of the i-th edge (0-based)
    Entry { step: usize, var: usize },
    /// anything else (used by auxiliary programs such as box bounds)
    Aux,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpVar {
    pub name: String,
    pub kind: LpVarKind,
    pub lower: f64,
    pub upper: f64,
}

/// `lower <= sum a_j x_j <= upper`
#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinProgram {
    pub vars: Vec<LpVar>,
    pub rows: Vec<LpRow>,
    /// Minimized.
    pub objective: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// One value per program variable; empty when infeasible.
    pub assignment: Vec<f64>,
    pub objective: f64,
    /// False when the objective is unbounded below; the assignment is then
    /// some feasible vertex.
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("simplex iteration limit exceeded")]
    IterationLimit,
    #[error("numerical breakdown: {0}")]
    Numerical(String),
    #[error("path does not exist in the automaton")]
    NoSuchPath,
    #[error("outcome is infeasible; no trace to extract")]
    NotFeasible,
    #[error("location {0} has a flow that is not a rate interval")]
    NotLinear(String),
}

impl LpOutcome {
    fn infeasible() -> Self {
        LpOutcome { status: LpStatus::Infeasible, assignment: Vec::new(), objective: f64::NAN, bounded: true }
    }

    pub fn is_feasible(&self) -> bool {
        self.status == LpStatus::Feasible
    }

    /// Describes the worst row or bound violation beyond tolerance, if any.
    pub fn worst_violation(&self, p: &LinProgram) -> Option<String> {
        if !self.is_feasible() {
            return None;
        }
        let x = &self.assignment;
        for (j, v) in p.vars.iter().enumerate() {
            let tol = FEAS_TOL * (1.0 + x[j].abs());
            if x[j] < v.lower - tol || x[j] > v.upper + tol {
                return Some(format!("{} = {} outside [{}, {}]", v.name, x[j], v.lower, v.upper));
            }
        }
        for r in &p.rows {
            let s: f64 = r.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let norm = r.coeffs.iter().map(|(_, a)| a * a).sum::<f64>().sqrt().max(1.0);
            let scale = r.coeffs.iter().map(|&(j, _)| x[j].abs()).fold(1.0, f64::max);
            let tol = FEAS_TOL * norm * scale;
            if s < r.lower - tol || s > r.upper + tol {
                return Some(format!("row `{}` evaluates to {s} outside [{}, {}]", r.label, r.lower, r.upper));
            }
        }
        None
    }
}

impl LinProgram {
    pub fn add_var(&mut self, name: impl Into<String>, kind: LpVarKind, lower: f64, upper: f64) -> usize {
        self.vars.push(LpVar { name: name.into(), kind, lower, upper });
        self.vars.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, lower: f64, upper: f64, label: impl Into<String>) {
        self.rows.push(LpRow { coeffs, lower, upper, label: label.into() });
    }

    pub fn var_index(&self, kind: LpVarKind) -> Option<usize> {
        self.vars.iter().position(|v| v.kind == kind)
    }

    /// Plain-text dump, one `lo <= expr <= hi` line per row, for cross-checking
    /// with an external solver.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let term = |coeffs: &[(usize, f64)]| {
            let parts: Vec<String> =
                coeffs.iter().map(|&(j, a)| format!("{a} {}", self.vars[j].name)).collect();
            if parts.is_empty() {
                "0".to_string()
            } else {
                parts.join(" + ")
            }
        };
        let _ = writeln!(out, "minimize {}", term(&self.objective));
        for v in &self.vars {
            let _ = writeln!(out, "{} <= {} <= {}", v.lower, v.name, v.upper);
        }
        for r in &self.rows {
            let _ = writeln!(out, "{} <= {} <= {}    # {}", r.lower, term(&r.coeffs), r.upper, r.label);
        }
        out
    }
}

/// Decides feasibility and, if feasible, returns an optimal vertex for the
/// objective. Deterministic: the same program always yields the same bits.
pub fn solve_lp(p: &LinProgram) -> Result<LpOutcome, LpError> {
    simplex::solve(p)
}
