//! Dense two-phase primal simplex, Dantzig pricing with a Bland fallback.

use super::{LinProgram, LpError, LpOutcome, LpStatus};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
/// Degenerate pivots in a row before pricing falls back to Bland's rule.
const DEGENERATE_RUN: usize = 50;
/// Feasibility tolerance, relative to the row norm.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, PartialEq)]
enum Sense {
    Le,
    Ge,
    Eq,
}

struct StdRow {
    coeffs: Vec<(usize, f64)>,
    sense: Sense,
    rhs: f64,
}

/// How an original variable is rebuilt from nonnegative columns:
/// `x = offset + sum sign * col`.
struct ColumnMap {
    offset: f64,
    parts: Vec<(usize, f64)>,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// row-major, `cols + 1` entries per row, the last one is the right-hand side
    a: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.a[i * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let p = self.a[pr * w + pc];
        for k in 0..w {
            self.a[pr * w + k] /= p;
        }
        self.a[pr * w + pc] = 1.0;
        let (before, rest) = self.a.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[pc];
            if f != 0.0 {
                for k in 0..w {
                    row[k] -= f * prow[k];
                }
                row[pc] = 0.0;
            }
        }
        let f = self.obj[pc];
        if f != 0.0 {
            for k in 0..w {
                self.obj[k] -= f * prow[k];
            }
            self.obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Pivots until optimal. `allowed` bounds the entering columns. Prices by
    /// most negative reduced cost and switches to Bland's rule during runs of
    /// degenerate pivots, which keeps cycling out. Returns `false` if the
    /// objective is unbounded below.
    fn optimize(&mut self, allowed: usize, budget: &mut usize) -> Result<bool, LpError> {
        let mut stalled = 0usize;
        loop {
            let entering = if stalled >= DEGENERATE_RUN {
                (0..allowed).find(|&j| self.obj[j] < -COST_TOL)
            } else {
                (0..allowed).filter(|&j| self.obj[j] < -COST_TOL).fold(None, |best: Option<usize>, j| match best {
                    Some(b) if self.obj[b] <= self.obj[j] => Some(b),
                    _ => Some(j),
                })
            };
            let Some(pc) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let c = self.at(i, pc);
                if c > PIVOT_TOL {
                    let ratio = self.rhs(i) / c;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12 * (1.0 + br.abs())
                                || (ratio <= br + 1e-12 * (1.0 + br.abs())
                                    && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((pr, step)) = best else {
                return Ok(false);
            };
            stalled = if step > 0.0 { 0 } else { stalled + 1 };
            if *budget == 0 {
                return Err(LpError::IterationLimit);
            }
            *budget -= 1;
            self.pivot(pr, pc);
            // clamp tiny negative right-hand sides produced by cancellation
            for i in 0..self.rows {
                let idx = i * (self.cols + 1) + self.cols;
                if self.a[idx] < 0.0 && self.a[idx] > -1e-12 {
                    self.a[idx] = 0.0;
                }
            }
        }
    }

    fn set_objective(&mut self, costs: &[f64]) {
        let w = self.cols + 1;
        self.obj = vec![0.0; w];
        self.obj[..costs.len()].copy_from_slice(costs);
        for i in 0..self.rows {
            let cb = costs.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for k in 0..w {
                    self.obj[k] -= cb * self.a[i * w + k];
                }
            }
        }
    }
}

pub(super) fn solve(p: &LinProgram) -> Result<LpOutcome, LpError> {
    // Map every variable onto nonnegative columns.
    let mut ncols = 0usize;
    let mut maps = Vec::with_capacity(p.vars.len());
    let mut std_rows: Vec<StdRow> = Vec::new();
    for v in &p.vars {
        let map = match (v.lower.is_finite(), v.upper.is_finite()) {
            (true, up) => {
                let c = ncols;
                ncols += 1;
                if up {
                    std_rows.push(StdRow { coeffs: vec![(c, 1.0)], sense: Sense::Le, rhs: v.upper - v.lower });
                }
                ColumnMap { offset: v.lower, parts: vec![(c, 1.0)] }
            }
            (false, true) => {
                let c = ncols;
                ncols += 1;
                ColumnMap { offset: v.upper, parts: vec![(c, -1.0)] }
            }
            (false, false) => {
                let c = ncols;
                ncols += 2;
                ColumnMap { offset: 0.0, parts: vec![(c, 1.0), (c + 1, -1.0)] }
            }
        };
        maps.push(map);
    }
    for row in &p.rows {
        let mut dense: Vec<(usize, f64)> = Vec::new();
        let mut constant = 0.0;
        for &(j, a) in &row.coeffs {
            constant += a * maps[j].offset;
            for &(c, s) in &maps[j].parts {
                match dense.iter_mut().find(|(k, _)| *k == c) {
                    Some((_, v)) => *v += a * s,
                    None => dense.push((c, a * s)),
                }
            }
        }
        dense.retain(|(_, a)| *a != 0.0);
        let lo = row.lower - constant;
        let hi = row.upper - constant;
        if dense.is_empty() {
            let tol = FEAS_TOL * (1.0 + constant.abs());
            if lo > tol || hi < -tol {
                return Ok(LpOutcome::infeasible());
            }
            continue;
        }
        let norm = dense.iter().map(|(_, a)| a * a).sum::<f64>().sqrt();
        let scaled: Vec<(usize, f64)> = dense.iter().map(|&(c, a)| (c, a / norm)).collect();
        if lo.is_finite() && hi.is_finite() && lo == hi {
            std_rows.push(StdRow { coeffs: scaled, sense: Sense::Eq, rhs: lo / norm });
            continue;
        }
        if hi.is_finite() {
            std_rows.push(StdRow { coeffs: scaled.clone(), sense: Sense::Le, rhs: hi / norm });
        }
        if lo.is_finite() {
            std_rows.push(StdRow { coeffs: scaled, sense: Sense::Ge, rhs: lo / norm });
        }
    }

    // Slacks, sign normalization, artificials.
    let m = std_rows.len();
    let nslack = std_rows.iter().filter(|r| r.sense != Sense::Eq).count();
    let mut needs_art = Vec::with_capacity(m);
    for r in &mut std_rows {
        if r.rhs < 0.0 {
            r.rhs = -r.rhs;
            for (_, a) in &mut r.coeffs {
                *a = -*a;
            }
            r.sense = match r.sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
        needs_art.push(r.sense != Sense::Le);
    }
    let nart = needs_art.iter().filter(|b| **b).count();
    let cols = ncols + nslack + nart;
    let w = cols + 1;
    let mut t = Tableau { rows: m, cols, a: vec![0.0; m * w], obj: vec![0.0; w], basis: vec![0; m] };
    let (mut next_slack, mut next_art) = (ncols, ncols + nslack);
    // slack columns are numbered in row order; recompute per row
    let mut slack_of_row = Vec::with_capacity(m);
    for r in &std_rows {
        if r.sense == Sense::Eq {
            slack_of_row.push(None);
        } else {
            slack_of_row.push(Some(next_slack));
            next_slack += 1;
        }
    }
    for (i, r) in std_rows.iter().enumerate() {
        for &(c, a) in &r.coeffs {
            t.a[i * w + c] += a;
        }
        t.a[i * w + cols] = r.rhs;
        if let Some(s) = slack_of_row[i] {
            t.a[i * w + s] = if r.sense == Sense::Le { 1.0 } else { -1.0 };
        }
        if needs_art[i] {
            t.a[i * w + next_art] = 1.0;
            t.basis[i] = next_art;
            next_art += 1;
        } else {
            t.basis[i] = slack_of_row[i].expect("<= rows carry a slack");
        }
    }

    let mut budget = 20_000 + 50 * (m + cols);
    if nart > 0 {
        let mut costs = vec![0.0; cols];
        for c in costs.iter_mut().skip(ncols + nslack) {
            *c = 1.0;
        }
        t.set_objective(&costs);
        t.optimize(cols, &mut budget)?;
        let infeasibility = -t.obj[cols];
        if infeasibility > FEAS_TOL * (1.0 + std_rows.len() as f64).sqrt() {
            return Ok(LpOutcome::infeasible());
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..m {
            if t.basis[i] >= ncols + nslack {
                if let Some(j) = (0..ncols + nslack).find(|&j| t.at(i, j).abs() > 1e-9) {
                    t.pivot(i, j);
                }
            }
        }
    }

    let mut costs = vec![0.0; cols];
    for &(j, c) in &p.objective {
        for &(col, s) in &maps[j].parts {
            costs[col] += c * s;
        }
    }
    t.set_objective(&costs);
    let bounded = t.optimize(ncols + nslack, &mut budget)?;

    let mut colval = vec![0.0; cols];
    for i in 0..m {
        colval[t.basis[i]] = t.rhs(i).max(0.0);
    }
    let assignment: Vec<f64> = maps
        .iter()
        .map(|mp| mp.offset + mp.parts.iter().map(|&(c, s)| s * colval[c]).sum::<f64>())
        .collect();
    let objective = p.objective.iter().map(|&(j, c)| c * assignment[j]).sum();

    let out = LpOutcome { status: LpStatus::Feasible, assignment, objective, bounded };
    if let Some(bad) = out.worst_violation(p) {
        return Err(LpError::Numerical(bad));
    }
    Ok(out)
}
