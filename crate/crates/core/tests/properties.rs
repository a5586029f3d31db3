//! Module invariants as properties over generated models.

mod common;

use proptest::prelude::*;

use nlha_core::abstraction::{build_lha, Abstraction, EdgeOrigin};
use nlha_core::lp::{check_path_feasible, encode_path, solve_lp, PathCheck};
use nlha_core::simulation::{guided_simulate, robust_satisfies, simulate_hybrid_path, validate_counterexample, SimConfig};
use nlha_core::{eval_interval, parse_model, Expr, Flow, Interval, LinearConstraint, LocId, StateBox, VarId};

use common::{feasible, nonlinear_model, random_path, rate_model};

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![(0usize..2).prop_map(Expr::var), (-3.0f64..3.0).prop_map(Expr::Const)];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::neg),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::div(a, b)),
            (inner.clone(), -2i32..=3).prop_map(|(a, n)| Expr::pow(a, n)),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            inner.prop_map(Expr::exp),
        ]
    })
}

/// Splits random leaves at box midpoints, returning every intermediate
/// abstraction.
fn split_chain(src: &str, seed: u64, n: usize) -> Vec<Abstraction> {
    let h = parse_model(src).expect("generated model parses");
    let Ok(a) = build_lha(&h) else { return Vec::new() };
    let mut rng = common::rng(seed);
    let mut out = vec![a];
    for _ in 0..n {
        use rand::Rng;
        let a = out.last().unwrap();
        let leaves: Vec<LocId> = a.tree.leaves().into_iter().filter(|l| *l != a.lha.initial).collect();
        let loc = leaves[rng.gen_range(0..leaves.len())];
        let v = VarId(rng.gen_range(0..a.lha.nvars()));
        let iv = a.boxes[loc.0].get(v);
        if iv.width() < 1e-3 {
            break;
        }
        match a.split(loc, &LinearConstraint::var_le(v, iv.mid())) {
            Ok(b) => out.push(b),
            Err(_) => break,
        }
    }
    out
}

fn rates(a: &Abstraction, l: LocId) -> Vec<Interval> {
    a.lha
        .location(l)
        .flows
        .iter()
        .map(|(_, f)| match f {
            Flow::Interval(i) => *i,
            Flow::Expr(e) => Interval::point(e.constant_value().expect("abstract flows are constant")),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn interval_evaluation_encloses_points(e in expr(), lo in prop::array::uniform2(-3.0f64..3.0), w in prop::array::uniform2(0.0f64..2.0), u in prop::array::uniform2(0.0f64..=1.0)) {
        let b = StateBox(vec![Interval::new(lo[0], lo[0] + w[0]), Interval::new(lo[1], lo[1] + w[1])]);
        let p = [lo[0] + u[0] * w[0], lo[1] + u[1] * w[1]];
        if let (Ok(enc), Ok(v)) = (eval_interval(&e, &b), e.eval(&p)) {
            prop_assert!(enc.contains(v), "{} outside [{}, {}]", v, enc.lo, enc.hi);
        }
    }

    #[test]
    fn feasible_assignments_satisfy_the_program(seed in any::<u64>(), walk in any::<u64>(), len in 1usize..5) {
        let h = parse_model(&rate_model(seed, false)).unwrap();
        let p = random_path(&h, walk, len);
        let lp = encode_path(&h, &p).unwrap();
        let a = solve_lp(&lp).unwrap();
        prop_assert_eq!(a.worst_violation(&lp), None);
        // bit-for-bit determinism
        prop_assert_eq!(format!("{:?}", solve_lp(&lp).unwrap()), format!("{a:?}"));
    }

    #[test]
    fn extra_guards_never_create_feasibility(seed in any::<u64>(), walk in any::<u64>(), len in 1usize..5, bound in 0.0f64..10.0) {
        let mut h = parse_model(&rate_model(seed, false)).unwrap();
        let p = random_path(&h, walk, len);
        let before = feasible(&h, &p);
        let t = *p.transitions.last().unwrap();
        h.transitions[t.0].guard.push(LinearConstraint::var_le(VarId(0), bound));
        prop_assert!(before || !feasible(&h, &p));
    }

    #[test]
    fn parse_errors_point_into_the_input(s in "[ -~\n]{0,120}") {
        if let Err(e) = parse_model(&s) {
            let lines: Vec<&str> = s.split('\n').collect();
            prop_assert!(e.line >= 1 && e.line <= lines.len(), "{e} in {s:?}");
            prop_assert!(e.column >= 1 && e.column <= lines[e.line - 1].chars().count() + 1, "{e} in {s:?}");
        }
    }

    #[test]
    fn robust_satisfaction_implies_satisfaction(c in prop::collection::vec(-2.0f64..2.0, 2), b in -3.0f64..3.0, x in prop::collection::vec(-3.0f64..3.0, 2), eps in 0.0f64..1.0) {
        let c = LinearConstraint::le(vec![(VarId(0), c[0]), (VarId(1), c[1])], b);
        if robust_satisfies(&c, &x, eps) {
            prop_assert!(c.is_satisfied(&x));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn tree_and_abstraction_stay_consistent(seed in any::<u64>(), splits in 1usize..4) {
        let chain = split_chain(&nonlinear_model(seed), seed ^ 7, splits);
        for (i, a) in chain.iter().enumerate() {
            let mut leaves = a.tree.leaves();
            leaves.sort();
            let all: Vec<LocId> = (0..a.lha.locations.len()).map(LocId).collect();
            prop_assert_eq!(leaves, all);
            prop_assert!(a.lha.is_linear());
            for l in 0..a.lha.locations.len() {
                let node = a.tree.node_of(LocId(l)).unwrap();
                for c in a.tree.constraints_to(node) {
                    prop_assert!(a.lha.location(LocId(l)).invariant.contains(&c));
                }
            }
            for (t, o) in a.edge_origin.iter().enumerate() {
                if let EdgeOrigin::Bridge { node } = o {
                    let tr = &a.lha.transitions[t];
                    prop_assert!(tr.resets.is_empty());
                    prop_assert_eq!(tr.guard.len(), 1);
                    let (c1, c2) = a.tree.node(*node).children.unwrap();
                    let allowed = [a.tree.node(c1).split.clone(), a.tree.node(c2).split.clone()];
                    prop_assert!(allowed.contains(&Some(tr.guard[0].clone())));
                }
            }
            if i > 0 {
                // children refine the rates of the location they replace
                let prev = &chain[i - 1];
                for l in 0..a.lha.locations.len() {
                    let node = a.tree.node_of(LocId(l)).unwrap();
                    let parent = a.tree.node(node).parent;
                    let Some(pl) = parent.and_then(|p| prev.tree.node(p).leaf) else { continue };
                    for (c, p) in rates(a, LocId(l)).iter().zip(rates(prev, pl)) {
                        prop_assert!(c.is_subset_of(&p), "[{}, {}] not in [{}, {}]", c.lo, c.hi, p.lo, p.hi);
                    }
                }
            }
        }
    }

    #[test]
    fn jumps_change_only_reset_variables(seed in any::<u64>(), walk in any::<u64>(), len in 1usize..5) {
        let h = parse_model(&rate_model(seed, false)).unwrap();
        let p = random_path(&h, walk, len);
        let Ok(PathCheck::Feasible(tr)) = check_path_feasible(&h, &p) else { return Ok(()) };
        let run = guided_simulate(&h, &tr, &SimConfig::default()).unwrap();
        for j in &run.trajectory.jumps {
            let t = h.transition(j.transition);
            for k in 0..h.nvars() {
                let want = t.reset_of(VarId(k)).unwrap_or(j.pre[k]);
                prop_assert_eq!(j.post[k].to_bits(), want.to_bits());
            }
        }
    }

    #[test]
    fn constant_rate_replay_matches_the_trace(seed in any::<u64>(), walk in any::<u64>(), len in 1usize..5) {
        let h = parse_model(&rate_model(seed, true)).unwrap();
        let p = random_path(&h, walk, len);
        let Ok(PathCheck::Feasible(tr)) = check_path_feasible(&h, &p) else { return Ok(()) };
        let run = guided_simulate(&h, &tr, &SimConfig::default()).unwrap();
        for (seg, step) in run.trajectory.segments.iter().zip(&tr.steps) {
            for (a, b) in seg.last().iter().zip(&step.exit) {
                prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn validated_traces_replay_cleanly(seed in any::<u64>(), walk in any::<u64>(), len in 1usize..5) {
        let h = parse_model(&rate_model(seed, false)).unwrap();
        let p = random_path(&h, walk, len);
        let Ok(PathCheck::Feasible(tr)) = check_path_feasible(&h, &p) else { return Ok(()) };
        let cfg = SimConfig::default();
        let v = validate_counterexample(&h, &tr, &cfg).unwrap();
        if v.is_validated() {
            let d: Vec<f64> = tr.steps.iter().map(|s| s.dwell).collect();
            prop_assert!(simulate_hybrid_path(&h, &tr.path, &tr.steps[0].entry, &d, &cfg).is_ok());
        }
    }
}
