use super::{solve_lp, LinProgram, LpError, LpOutcome, LpVarKind};
use crate::model::{HybridAutomaton, LinearConstraint, Path, Trace, TraceStep, VarId};

/// Knobs for [`encode_path_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeOptions {
    /// Strict bounds `s < b` are encoded as `s <= b - strict_slack`.
    pub strict_slack: f64,
    /// Guards and invariants are tightened by `margin * |c|_2`, yielding a
    /// witness whose checkpoints satisfy them with Euclidean margin `margin`.
    pub margin: f64,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions { strict_slack: 1e-6, margin: 0.0 }
    }
}

/// Result of [`check_path_feasible`].
#[derive(Debug, Clone, PartialEq)]
pub enum PathCheck {
    Feasible(Trace),
    Infeasible,
}

impl PathCheck {
    pub fn is_feasible(&self) -> bool {
        matches!(self, PathCheck::Feasible(_))
    }
}

struct Cols {
    dwell: Vec<usize>,
    entry: Vec<Vec<usize>>,
    exit: Vec<Vec<usize>>,
}

fn add_constraint(
    p: &mut LinProgram,
    c: &LinearConstraint,
    cols: &[usize],
    opts: &EncodeOptions,
    label: String,
) {
    let shift = opts.margin * c.norm();
    let mut lower = c.lower + shift;
    let mut upper = c.upper - shift;
    if c.strict_lower {
        lower += opts.strict_slack;
    }
    if c.strict_upper {
        upper -= opts.strict_slack;
    }
    let coeffs = c.coeffs.iter().map(|(v, a)| (cols[v.0], *a)).collect();
    p.add_row(coeffs, lower, upper, label);
}

/// Encodes a path with default options.
pub fn encode_path(lha: &HybridAutomaton, path: &Path) -> Result<LinProgram, LpError> {
    encode_path_with(lha, path, &EncodeOptions::default())
}

pub fn encode_path_with(
    lha: &HybridAutomaton,
    path: &Path,
    opts: &EncodeOptions,
) -> Result<LinProgram, LpError> {
    if !lha.path_exists(path) {
        return Err(LpError::NoSuchPath);
    }
    let n = path.len();
    let m = lha.nvars();
    let names = lha.var_names();
    let mut p = LinProgram::default();
    let mut cols = Cols { dwell: Vec::new(), entry: Vec::new(), exit: Vec::new() };
    let first_guarded = n > 0 && !lha.transition(path.transitions[0]).guard.is_empty();
    let mut pre_initial = Vec::new();
    if first_guarded {
        // values at the initial location, before the first edge's resets
        for (k, v) in lha.vars.iter().enumerate() {
            pre_initial.push(p.add_var(
                format!("gamma0[{}]", names[k]),
                LpVarKind::Exit { step: 0, var: k },
                v.range.lo,
                v.range.hi,
            ));
        }
    }
    for i in 1..=n {
        let t = p.add_var(format!("t{i}"), LpVarKind::Dwell { step: i }, 0.0, f64::INFINITY);
        cols.dwell.push(t);
        let incoming = lha.transition(path.transitions[i - 1]);
        let mut entry = Vec::with_capacity(m);
        for (k, v) in lha.vars.iter().enumerate() {
            // unreset initial values range over the declared box
            let (lo, hi) = if i == 1 && incoming.reset_of(VarId(k)).is_none() && !first_guarded {
                (v.range.lo, v.range.hi)
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            };
            entry.push(p.add_var(
                format!("lambda{}[{}]", i - 1, names[k]),
                LpVarKind::Entry { step: i - 1, var: k },
                lo,
                hi,
            ));
        }
        let exit: Vec<usize> = (0..m)
            .map(|k| {
                p.add_var(
                    format!("gamma{i}[{}]", names[k]),
                    LpVarKind::Exit { step: i, var: k },
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                )
            })
            .collect();
        cols.entry.push(entry);
        cols.exit.push(exit);
    }
    if first_guarded {
        for (j, c) in lha.transition(path.transitions[0]).guard.iter().enumerate() {
            add_constraint(&mut p, c, &pre_initial, opts, format!("guard 0 #{j}"));
        }
    }
    for i in 1..=n {
        let tr_in = lha.transition(path.transitions[i - 1]);
        let loc = lha.location(tr_in.target);
        let entry = cols.entry[i - 1].clone();
        let exit = cols.exit[i - 1].clone();
        let t = cols.dwell[i - 1];
        // entry values: reset constant, or carried over from the previous exit
        for k in 0..m {
            let name = &names[k];
            match tr_in.reset_of(VarId(k)) {
                Some(c) => p.add_row(vec![(entry[k], 1.0)], c, c, format!("reset {} {name}", i - 1)),
                None if i > 1 => p.add_row(
                    vec![(entry[k], 1.0), (cols.exit[i - 2][k], -1.0)],
                    0.0,
                    0.0,
                    format!("carry {} {name}", i - 1),
                ),
                None if first_guarded => p.add_row(
                    vec![(entry[k], 1.0), (pre_initial[k], -1.0)],
                    0.0,
                    0.0,
                    format!("carry 0 {name}"),
                ),
                None => {}
            }
        }
        // a t <= gamma - lambda <= b t
        for k in 0..m {
            let rate = loc
                .flow(VarId(k))
                .and_then(|f| f.as_rate())
                .ok_or_else(|| LpError::NotLinear(loc.name.clone()))?;
            let name = &names[k];
            if rate.lo == rate.hi {
                p.add_row(
                    vec![(exit[k], 1.0), (entry[k], -1.0), (t, -rate.lo)],
                    0.0,
                    0.0,
                    format!("flow {i} {name}"),
                );
            } else {
                p.add_row(
                    vec![(exit[k], 1.0), (entry[k], -1.0), (t, -rate.lo)],
                    0.0,
                    f64::INFINITY,
                    format!("flow {i} {name} lower"),
                );
                p.add_row(
                    vec![(exit[k], 1.0), (entry[k], -1.0), (t, -rate.hi)],
                    f64::NEG_INFINITY,
                    0.0,
                    format!("flow {i} {name} upper"),
                );
            }
        }
        for (j, c) in loc.invariant.iter().enumerate() {
            add_constraint(&mut p, c, &entry, opts, format!("invariant {i} entry #{j}"));
            add_constraint(&mut p, c, &exit, opts, format!("invariant {i} exit #{j}"));
        }
        if i < n {
            for (j, c) in lha.transition(path.transitions[i]).guard.iter().enumerate() {
                add_constraint(&mut p, c, &exit, opts, format!("guard {i} #{j}"));
            }
        }
    }
    p.objective = cols.dwell.iter().map(|&t| (t, 1.0)).collect();
    Ok(p)
}

/// Reads a trace off a feasible solution of `encode_path(lha, path)`.
pub fn extract_trace(lha: &HybridAutomaton, path: &Path, p: &LinProgram, o: &LpOutcome) -> Result<Trace, LpError> {
    if !o.is_feasible() {
        return Err(LpError::NotFeasible);
    }
    let m = lha.nvars();
    let value = |kind| p.var_index(kind).map(|j| o.assignment[j]).ok_or(LpError::NotFeasible);
    let mut steps = Vec::with_capacity(path.len());
    for (idx, tid) in path.transitions.iter().enumerate() {
        let i = idx + 1;
        let location = lha.transition(*tid).target;
        let dwell = value(LpVarKind::Dwell { step: i })?;
        let entry = (0..m).map(|k| value(LpVarKind::Entry { step: i - 1, var: k })).collect::<Result<_, _>>()?;
        let exit = (0..m).map(|k| value(LpVarKind::Exit { step: i, var: k })).collect::<Result<_, _>>()?;
        steps.push(TraceStep { location, dwell, entry, exit, spans: vec![(location, dwell)] });
    }
    Ok(Trace { path: path.clone(), steps })
}

/// Encodes, solves, and extracts a trace in one go.
pub fn check_path_feasible(lha: &HybridAutomaton, path: &Path) -> Result<PathCheck, LpError> {
    check_path_feasible_with(lha, path, &EncodeOptions::default())
}

pub fn check_path_feasible_with(
    lha: &HybridAutomaton,
    path: &Path,
    opts: &EncodeOptions,
) -> Result<PathCheck, LpError> {
    let p = encode_path_with(lha, path, opts)?;
    let o = solve_lp(&p)?;
    if !o.is_feasible() {
        return Ok(PathCheck::Infeasible);
    }
    Ok(PathCheck::Feasible(extract_trace(lha, path, &p, &o)?))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::interval::Interval;
    use crate::lp::LpStatus;
    use crate::model::{Flow, LocId, Location, Reset, TransId, Transition, VarId, Variable};

    /// entry -(x:=0)-> v1 [x' in [1,1], x <= 3] -(x >= g)-> bad
    fn one_step(guard: f64) -> HybridAutomaton {
        let x = VarId(0);
        let mut v1 = Location::new("v1");
        v1.invariant.push(LinearConstraint::var_le(x, 3.0));
        v1.flows.push((x, Flow::Interval(Interval::point(1.0))));
        let mut bad = Location::new("bad");
        bad.flows.push((x, Flow::Interval(Interval::point(0.0))));
        let mut e0 = Transition::new(LocId(0), LocId(1));
        e0.resets.push(Reset { var: x, value: 0.0 });
        let mut e1 = Transition::new(LocId(1), LocId(2));
        e1.guard.push(LinearConstraint::var_ge(x, guard));
        HybridAutomaton {
            name: "one".into(),
            vars: vec![Variable { name: "x".into(), range: Interval::new(-10.0, 10.0) }],
            locations: vec![Location::new("entry"), v1, bad],
            transitions: vec![e0, e1],
            initial: LocId(0),
            bad: BTreeSet::from([LocId(2)]),
        }
    }

    fn full_path() -> Path {
        Path::new(vec![TransId(0), TransId(1)])
    }

    fn row<'a>(p: &'a LinProgram, label: &str) -> &'a crate::lp::LpRow {
        p.rows.iter().find(|r| r.label == label).unwrap_or_else(|| panic!("no row {label}"))
    }

    #[test]
    fn transcribes_the_one_step_system() {
        let h = one_step(2.0);
        let p = encode_path(&h, &full_path()).unwrap();
        let t1 = p.var_index(LpVarKind::Dwell { step: 1 }).unwrap();
        let l0 = p.var_index(LpVarKind::Entry { step: 0, var: 0 }).unwrap();
        let g1 = p.var_index(LpVarKind::Exit { step: 1, var: 0 }).unwrap();
        assert_eq!(p.vars[t1].lower, 0.0);
        let reset = row(&p, "reset 0 x");
        assert_eq!((reset.coeffs.clone(), reset.lower, reset.upper), (vec![(l0, 1.0)], 0.0, 0.0));
        let flow = row(&p, "flow 1 x");
        assert_eq!(flow.coeffs, vec![(g1, 1.0), (l0, -1.0), (t1, -1.0)]);
        assert_eq!((flow.lower, flow.upper), (0.0, 0.0));
        let guard = row(&p, "guard 1 #0");
        assert_eq!((guard.coeffs.clone(), guard.lower), (vec![(g1, 1.0)], 2.0));
        assert_eq!(row(&p, "invariant 1 entry #0").coeffs, vec![(l0, 1.0)]);
        assert_eq!(row(&p, "invariant 1 exit #0").upper, 3.0);
    }

    #[test]
    fn one_step_solution_takes_minimal_time() {
        let h = one_step(2.0);
        let PathCheck::Feasible(tr) = check_path_feasible(&h, &full_path()).unwrap() else {
            panic!("expected feasible")
        };
        assert_eq!(tr.steps.len(), 2);
        assert!((tr.steps[0].dwell - 2.0).abs() < 1e-12);
        assert!((tr.steps[0].exit[0] - 2.0).abs() < 1e-12);
        assert_eq!(tr.steps[0].entry[0], 0.0);
        assert!(tr.steps[1].dwell.abs() < 1e-12);
    }

    #[test]
    fn contradictory_guard_is_infeasible() {
        let h = one_step(5.0);
        assert_eq!(check_path_feasible(&h, &full_path()).unwrap(), PathCheck::Infeasible);
        let p = encode_path(&h, &full_path()).unwrap();
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn zero_length_path_is_empty_and_feasible() {
        let h = one_step(2.0);
        let p = encode_path(&h, &Path::default()).unwrap();
        assert!(p.vars.is_empty() && p.rows.is_empty());
        let PathCheck::Feasible(tr) = check_path_feasible(&h, &Path::default()).unwrap() else { panic!() };
        assert!(tr.steps.is_empty());
    }

    #[test]
    fn mid_path_reset_breaks_the_carry() {
        let mut h = one_step(2.0);
        h.transitions[1].resets.push(Reset { var: VarId(0), value: 0.0 });
        let p = encode_path(&h, &full_path()).unwrap();
        let l1 = p.var_index(LpVarKind::Entry { step: 1, var: 0 }).unwrap();
        let r = row(&p, "reset 1 x");
        assert_eq!((r.coeffs.clone(), r.lower, r.upper), (vec![(l1, 1.0)], 0.0, 0.0));
        assert!(p.rows.iter().all(|r| !r.label.starts_with("carry 1")));
    }

    #[test]
    fn missing_path_is_an_error() {
        let h = one_step(2.0);
        assert_eq!(encode_path(&h, &Path::new(vec![TransId(1)])), Err(LpError::NoSuchPath));
    }

    #[test]
    fn margin_tightens_guards() {
        let h = one_step(2.0);
        let opts = EncodeOptions { margin: 0.5, ..Default::default() };
        let p = encode_path_with(&h, &full_path(), &opts).unwrap();
        let o = solve_lp(&p).unwrap();
        let tr = extract_trace(&h, &full_path(), &p, &o).unwrap();
        assert!((tr.steps[0].exit[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn strict_bounds_use_slack() {
        let mut h = one_step(2.0);
        h.transitions[1].guard[0] = LinearConstraint::var_ge(VarId(0), 2.0).strict(true, false);
        let PathCheck::Feasible(tr) = check_path_feasible(&h, &full_path()).unwrap() else { panic!() };
        assert!((tr.steps[0].exit[0] - (2.0 + 1e-6)).abs() < 1e-12);
    }

    #[test]
    fn extraction_refuses_infeasible_outcome() {
        let h = one_step(5.0);
        let p = encode_path(&h, &full_path()).unwrap();
        let o = solve_lp(&p).unwrap();
        assert_eq!(extract_trace(&h, &full_path(), &p, &o), Err(LpError::NotFeasible));
    }
}
