//! Robust constraint satisfaction and counterexample validation.

use serde::Serialize;

use crate::abstraction::location_box;
use crate::model::{HybridAutomaton, LinearConstraint, Trace, TransId};

use super::{guided, Failure, SimConfig, SimError, Trajectory};

/// Whether `c` holds at every point within Euclidean distance `eps` of `val`.
/// For a half-space this is the bound tightened by `eps * |c|_2`.
pub fn robust_satisfies(c: &LinearConstraint, val: &[f64], eps: f64) -> bool {
    let s = c.value(val);
    let shift = eps * c.norm();
    let upper_ok = if !c.upper.is_finite() {
        true
    } else if c.strict_upper {
        s < c.upper - shift
    } else {
        s <= c.upper - shift
    };
    let lower_ok = if !c.lower.is_finite() {
        true
    } else if c.strict_lower {
        s > c.lower + shift
    } else {
        s >= c.lower + shift
    };
    upper_ok && lower_ok
}

/// `floor(c/eps) eps < s < ceil(c/eps) eps`; when `c` is a multiple of `eps`
/// the lower end is moved down one `eps` so the set keeps width `eps`.
pub fn widen_equality(c: f64, eps: f64) -> (f64, f64) {
    let lo = (c / eps).floor() * eps;
    let hi = (c / eps).ceil() * eps;
    if lo == hi {
        (hi - eps, hi)
    } else {
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlaggedGuard {
    pub transition: TransId,
    pub index: usize,
    /// Width of the satisfying set inside the source box, along the normal.
    pub width: f64,
    /// Widened replacement for an equality guard.
    pub suggestion: Option<LinearConstraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralReport {
    pub eps: f64,
    /// Name of the test applied to each guard.
    pub test: &'static str,
    pub flagged: Vec<FlaggedGuard>,
}

impl StructuralReport {
    pub fn is_robust(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn warnings(&self, h: &HybridAutomaton) -> Vec<String> {
        let names = h.var_names();
        self.flagged
            .iter()
            .map(|f| {
                let tr = h.transition(f.transition);
                let mut s = format!(
                    "guard `{}` of {} -> {} is thinner than {} ({}: {})",
                    tr.guard[f.index].display(&names),
                    h.location(tr.source).name,
                    h.location(tr.target).name,
                    self.eps,
                    self.test,
                    f.width
                );
                if let Some(w) = &f.suggestion {
                    s.push_str(&format!("; consider `{}`", w.display(&names)));
                }
                s
            })
            .collect()
    }
}

/// Flags every guard constraint whose satisfying set, within the box of the
/// transition's source location, is narrower than `eps` along the
/// constraint's normal. Equality guards get a widening suggestion.
pub fn check_structural_robustness(h: &HybridAutomaton, eps: f64) -> StructuralReport {
    let mut flagged = Vec::new();
    for (i, tr) in h.transitions.iter().enumerate() {
        let b = location_box(h, tr.source).unwrap_or_else(|_| h.ranges());
        for (j, c) in tr.guard.iter().enumerate() {
            let norm = c.norm();
            if norm == 0.0 {
                continue;
            }
            let r = b.linear_range(&c.coeffs);
            let lo = r.lo.max(c.lower);
            let hi = r.hi.min(c.upper);
            let width = ((hi - lo) / norm).max(0.0);
            if width < eps {
                let suggestion = (c.lower == c.upper).then(|| {
                    let (lo, hi) = widen_equality(c.lower, eps);
                    LinearConstraint::new(c.coeffs.clone(), lo, hi).strict(true, true)
                });
                flagged.push(FlaggedGuard { transition: TransId(i), index: j, width, suggestion });
            }
        }
    }
    StructuralReport { eps, test: "normal-direction width", flagged }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationVerdict {
    Validated,
    Refuted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationResult {
    pub verdict: ValidationVerdict,
    /// Every failure, earliest first; empty iff validated.
    pub failures: Vec<Failure>,
    pub trajectory: Trajectory,
    /// Structural robustness warnings for the automaton.
    pub warnings: Vec<String>,
}

impl ValidationResult {
    pub fn is_validated(&self) -> bool {
        self.verdict == ValidationVerdict::Validated
    }

    pub fn first_failure(&self) -> Option<&Failure> {
        self.failures.first()
    }

    pub fn to_json(&self, h: &HybridAutomaton) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert("verdict".into(), serde_json::to_value(self.verdict).expect("enum serializes"));
        if let Some(f) = self.first_failure() {
            m.insert("failure".into(), f.to_json(h));
        }
        m.insert("failures".into(), self.failures.len().into());
        m.insert("samples".into(), self.trajectory.sample_count().into());
        m.insert("jumps".into(), self.trajectory.jumps_json(h));
        m.insert("warnings".into(), self.warnings.clone().into());
        serde_json::Value::Object(m)
    }
}

/// Replays a concretized trace on the concrete automaton. Validated iff every
/// guard at every jump and every invariant at every sample holds robustly
/// with margin `eps_robust`, and every dwell stays within the `eps_sim` tube.
pub fn validate_counterexample(h: &HybridAutomaton, tr: &Trace, cfg: &SimConfig) -> Result<ValidationResult, SimError> {
    let warnings = check_structural_robustness(h, cfg.eps_robust).warnings(h);
    let run = guided(h, tr, cfg, cfg.eps_robust)?;
    let verdict = if run.failures.is_empty() { ValidationVerdict::Validated } else { ValidationVerdict::Refuted };
    Ok(ValidationResult { verdict, failures: run.failures, trajectory: run.trajectory, warnings })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{COOLING, LINEAR};
    use super::super::{simulate_hybrid_path, FailureKind};
    use super::*;
    use crate::abstraction::build_lha;
    use crate::lp::{check_path_feasible, encode_path_with, extract_trace, solve_lp, EncodeOptions, PathCheck};
    use crate::model::{Path, VarId};
    use crate::parser::parse_model;

    #[test]
    fn half_space_margin() {
        let c = LinearConstraint::var_le(VarId(0), 5.0);
        assert!(robust_satisfies(&c, &[4.0], 0.5));
        assert!(!robust_satisfies(&c, &[4.8], 0.5));
        assert!(robust_satisfies(&c, &[5.0], 0.0));
        let strict = c.clone().strict(false, true);
        assert!(!robust_satisfies(&strict, &[5.0], 0.0));
        let diag = LinearConstraint::le(vec![(VarId(0), 3.0), (VarId(1), 4.0)], 10.0);
        // distance from origin to the plane is 2
        assert!(robust_satisfies(&diag, &[0.0, 0.0], 1.99));
        assert!(!robust_satisfies(&diag, &[0.0, 0.0], 2.01));
    }

    #[test]
    fn widening_formula() {
        let (lo, hi) = widen_equality(2.0, 0.1);
        assert!((lo - 1.9).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
        let (lo, hi) = widen_equality(2.05, 0.1);
        assert!((lo - 2.0).abs() < 1e-12 && (hi - 2.1).abs() < 1e-12);
    }

    fn guard_model(guard: &str) -> HybridAutomaton {
        let src = format!(
            "automaton g\nvar x in [-10, 10];\nlocation entry {{}}\nlocation a {{ flow: dx = 1; }}\nlocation b {{ flow: dx = 0; }}\ninit entry;\ntransition entry -> a {{ reset: x := 0; }}\ntransition a -> b {{ guard: {guard}; }}\n"
        );
        parse_model(&src).unwrap()
    }

    #[test]
    fn structural_flags_thin_guards() {
        let r = check_structural_robustness(&guard_model("x == 2"), 0.1);
        assert_eq!(r.flagged.len(), 1);
        let w = r.flagged[0].suggestion.as_ref().unwrap();
        assert!((w.lower - 1.9).abs() < 1e-12 && (w.upper - 2.0).abs() < 1e-12);
        assert!(w.strict_lower && w.strict_upper);
        assert!(check_structural_robustness(&guard_model("x >= 0"), 0.1).is_robust());
        let thin = check_structural_robustness(&guard_model("0 <= x <= 0.05"), 0.1);
        assert_eq!(thin.flagged.len(), 1);
        assert!((thin.flagged[0].width - 0.05).abs() < 1e-12);
        assert!(thin.flagged[0].suggestion.is_none());
        assert!(thin.warnings(&guard_model("0 <= x <= 0.05"))[0].contains("normal-direction width"));
    }

    #[test]
    fn robust_linear_witness_is_validated() {
        let h = parse_model(LINEAR).unwrap();
        let a = build_lha(&h).unwrap();
        let p = Path::new(vec![TransId(0), TransId(1)]);
        let opts = EncodeOptions { margin: 2e-4, ..EncodeOptions::default() };
        let lp = encode_path_with(&a.lha, &p, &opts).unwrap();
        let tr = extract_trace(&a.lha, &p, &lp, &solve_lp(&lp).unwrap()).unwrap();
        let v = validate_counterexample(&h, &a.concretize_trace(&tr).unwrap(), &SimConfig::default()).unwrap();
        assert!(v.is_validated(), "{:?}", v.failures);
        let x0 = tr.steps[0].entry.clone();
        let d: Vec<f64> = tr.steps.iter().map(|s| s.dwell).collect();
        assert!(simulate_hybrid_path(&h, &p, &x0, &d, &SimConfig::default()).is_ok());
        assert_eq!(v.to_json(&h)["verdict"], "validated");
    }

    #[test]
    fn boundary_witness_is_refuted_robustly() {
        let h = parse_model(LINEAR).unwrap();
        let a = build_lha(&h).unwrap();
        let p = Path::new(vec![TransId(0), TransId(1)]);
        let PathCheck::Feasible(tr) = check_path_feasible(&a.lha, &p).unwrap() else { panic!() };
        // the minimal-time witness sits exactly on x >= 4
        let v = validate_counterexample(&h, &tr, &SimConfig::default()).unwrap();
        assert!(!v.is_validated());
        assert_eq!(v.first_failure().unwrap().kind, FailureKind::Guard { transition: TransId(1), index: 0 });
        let m = v.first_failure().unwrap().valuation[0] - 4.0;
        assert!(m.abs() < 1e-9);
    }

    #[test]
    fn spurious_cooling_trace_is_refuted_at_the_jump() {
        let h = parse_model(COOLING).unwrap();
        let a = build_lha(&h).unwrap();
        let p = Path::new(vec![TransId(0), TransId(1)]);
        let PathCheck::Feasible(tr) = check_path_feasible(&a.lha, &p).unwrap() else { panic!() };
        let v = validate_counterexample(&h, &a.concretize_trace(&tr).unwrap(), &SimConfig::default()).unwrap();
        let f = v.first_failure().unwrap();
        assert_eq!(f.kind, FailureKind::Guard { transition: TransId(1), index: 0 });
        assert!((f.time - tr.steps[0].dwell).abs() < 1e-12);
        let json = v.to_json(&h);
        assert_eq!(json["verdict"], "refuted");
        assert_eq!(json["failure"]["kind"], "guard");
    }
}
