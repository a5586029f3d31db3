use std::fmt::Write;

use crate::model::{Flow, HybridAutomaton, LinearConstraint};

fn constraints(out: &mut String, cs: &[LinearConstraint], names: &[String]) {
    let parts: Vec<String> = cs.iter().map(|c| c.display(names).to_string()).collect();
    out.push_str(&parts.join(", "));
}

/// Canonical text form. `parse_model(serialize_model(h))` reproduces `h` for
/// any automaton produced by the parser.
pub fn serialize_model(h: &HybridAutomaton) -> String {
    let names = h.var_names();
    let mut out = String::new();
    let _ = writeln!(out, "automaton {}", h.name);
    if !h.vars.is_empty() {
        let decls: Vec<String> = h
            .vars
            .iter()
            .map(|v| format!("{} in [{}, {}]", v.name, v.range.lo, v.range.hi))
            .collect();
        let _ = writeln!(out, "var {};", decls.join(", "));
    }
    let _ = writeln!(out, "init {};", h.location(h.initial).name);
    if !h.bad.is_empty() {
        let bad: Vec<&str> = h.bad.iter().map(|b| h.location(*b).name.as_str()).collect();
        let _ = writeln!(out, "bad: {};", bad.join(", "));
    }
    for l in &h.locations {
        let _ = write!(out, "location {} {{", l.name);
        if !l.invariant.is_empty() {
            out.push_str(" invariant: ");
            constraints(&mut out, &l.invariant, &names);
            out.push(';');
        }
        if !l.flows.is_empty() {
            out.push_str(" flow:");
            for (v, f) in &l.flows {
                match f {
                    Flow::Expr(e) => {
                        let _ = write!(out, " d{} = {};", names[v.0], e.display(&names));
                    }
                    Flow::Interval(i) => {
                        let _ = write!(out, " d{} in [{}, {}];", names[v.0], i.lo, i.hi);
                    }
                }
            }
        }
        if l.invariant.is_empty() && l.flows.is_empty() {
            out.push_str("}\n");
        } else {
            out.push_str(" }\n");
        }
    }
    for t in &h.transitions {
        let _ = write!(
            out,
            "transition {} -> {} {{",
            h.location(t.source).name,
            h.location(t.target).name
        );
        if !t.guard.is_empty() {
            out.push_str(" guard: ");
            constraints(&mut out, &t.guard, &names);
            out.push(';');
        }
        if !t.resets.is_empty() {
            let rs: Vec<String> =
                t.resets.iter().map(|r| format!("{} := {}", names[r.var.0], r.value)).collect();
            let _ = write!(out, " reset: {};", rs.join(", "));
        }
        if t.guard.is_empty() && t.resets.is_empty() {
            out.push_str("}\n");
        } else {
            out.push_str(" }\n");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_model;
    use super::*;
    use crate::interval::Interval;
    use crate::model::VarId;

    const SRC: &str = "automaton a
var x in [0, 10], y in [-1, 1];
location e {}
location l { invariant: x < 3, 0 <= x - 2 * y <= 4; flow: dx in [1, 2]; dy = -sin(x) * y^2 / (1 + x); }
init e;
bad: l;
transition e -> l { reset: x := 0.5, y := -1; }
transition l -> l { guard: y > 0.25; }
";

    #[test]
    fn round_trip_is_structural_identity() {
        let h = parse_model(SRC).unwrap();
        let text = serialize_model(&h);
        let h2 = parse_model(&text).unwrap();
        assert_eq!(h, h2);
        assert_eq!(serialize_model(&h2), text);
    }

    #[test]
    fn interval_flows_and_strict_bounds_are_emitted() {
        let mut h = parse_model(SRC).unwrap();
        h.locations[1].flows[1].1 = Flow::Interval(Interval::new(-2.0, 0.5));
        let text = serialize_model(&h);
        assert!(text.contains("dx in [1, 2];"));
        assert!(text.contains("dy in [-2, 0.5];"));
        assert!(text.contains("x < 3"));
        assert!(text.contains("y > 0.25"));
        assert_eq!(parse_model(&text).unwrap().locations[1].flow(VarId(1)), h.locations[1].flow(VarId(1)));
    }
}
