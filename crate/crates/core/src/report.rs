//! JSON form of traces, shared by verdict reports and the `validate` command.
//!
//! ```text
//! {"path":  [{"from": "entry", "to": "on", "edge": 0}, ...],
//!  "steps": [{"location": "on", "dwell": 0.5, "entry": {"x": 20}, "exit": {"x": 21}}, ...]}
//! ```
//!
//! `edge` is the transition's index in declaration order.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::model::{HybridAutomaton, Path, Trace, TraceStep, TransId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub from: String,
    pub to: String,
    pub edge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepJson {
    pub location: String,
    pub dwell: f64,
    pub entry: BTreeMap<String, f64>,
    pub exit: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceJson {
    pub path: Vec<EdgeJson>,
    pub steps: Vec<StepJson>,
}

fn valuation(h: &HybridAutomaton, x: &[f64]) -> BTreeMap<String, f64> {
    h.vars.iter().zip(x).map(|(v, x)| (v.name.clone(), *x)).collect()
}

pub fn trace_to_json(h: &HybridAutomaton, tr: &Trace) -> TraceJson {
    let path = tr
        .path
        .transitions
        .iter()
        .map(|t| {
            let e = h.transition(*t);
            EdgeJson { from: h.location(e.source).name.clone(), to: h.location(e.target).name.clone(), edge: t.0 }
        })
        .collect();
    let steps = tr
        .steps
        .iter()
        .map(|s| StepJson {
            location: h.location(s.location).name.clone(),
            dwell: s.dwell,
            entry: valuation(h, &s.entry),
            exit: valuation(h, &s.exit),
        })
        .collect();
    TraceJson { path, steps }
}

/// Rebuilds a trace of `h`, checking that names, edges and variables agree.
pub fn trace_from_json(h: &HybridAutomaton, j: &TraceJson) -> Result<Trace, String> {
    let mut transitions = Vec::with_capacity(j.path.len());
    for (i, e) in j.path.iter().enumerate() {
        let t = h.transitions.get(e.edge).ok_or_else(|| format!("path[{i}]: no transition {}", e.edge))?;
        if h.location(t.source).name != e.from || h.location(t.target).name != e.to {
            return Err(format!("path[{i}]: transition {} does not go from {} to {}", e.edge, e.from, e.to));
        }
        transitions.push(TransId(e.edge));
    }
    let path = Path::new(transitions);
    if !h.path_exists(&path) {
        return Err("path is not connected or does not start at the initial location".into());
    }
    if j.steps.len() != path.len() {
        return Err(format!("{} steps for a path of {} transitions", j.steps.len(), path.len()));
    }
    let read = |m: &BTreeMap<String, f64>, what: &str| -> Result<Vec<f64>, String> {
        if let Some(k) = m.keys().find(|k| h.var_by_name(k).is_none()) {
            return Err(format!("{what}: unknown variable {k}"));
        }
        h.vars
            .iter()
            .map(|v| m.get(&v.name).copied().ok_or_else(|| format!("{what}: missing value for {}", v.name)))
            .collect()
    };
    let mut steps = Vec::with_capacity(j.steps.len());
    for (i, (s, t)) in j.steps.iter().zip(&path.transitions).enumerate() {
        let location = h.transition(*t).target;
        if h.location(location).name != s.location {
            return Err(format!("steps[{i}]: expected location {}, found {}", h.location(location).name, s.location));
        }
        if !(s.dwell >= 0.0 && s.dwell.is_finite()) {
            return Err(format!("steps[{i}]: invalid dwell {}", s.dwell));
        }
        steps.push(TraceStep {
            location,
            dwell: s.dwell,
            entry: read(&s.entry, &format!("steps[{i}].entry"))?,
            exit: read(&s.exit, &format!("steps[{i}].exit"))?,
            spans: vec![(location, s.dwell)],
        });
    }
    Ok(Trace { path, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{check_path_feasible, PathCheck};
    use crate::parser::parse_model;

    const SRC: &str = "automaton r
var x in [0, 10];
location entry {}
location a { flow: dx = 1; }
location b { flow: dx = 0; }
init entry;
transition entry -> a { reset: x := 1; }
transition a -> b { guard: x >= 3; }
";

    #[test]
    fn round_trip() {
        let h = parse_model(SRC).unwrap();
        let p = Path::new(vec![TransId(0), TransId(1)]);
        let PathCheck::Feasible(tr) = check_path_feasible(&h, &p).unwrap() else { panic!() };
        let j = trace_to_json(&h, &tr);
        assert_eq!(j.path[1], EdgeJson { from: "a".into(), to: "b".into(), edge: 1 });
        let text = serde_json::to_string(&j).unwrap();
        let back: TraceJson = serde_json::from_str(&text).unwrap();
        assert_eq!(trace_from_json(&h, &back).unwrap(), tr);
    }

    #[test]
    fn mismatches_are_reported() {
        let h = parse_model(SRC).unwrap();
        let mut j = TraceJson {
            path: vec![EdgeJson { from: "entry".into(), to: "a".into(), edge: 0 }],
            steps: vec![StepJson {
                location: "a".into(),
                dwell: 1.0,
                entry: BTreeMap::from([("x".to_string(), 1.0)]),
                exit: BTreeMap::from([("x".to_string(), 2.0)]),
            }],
        };
        assert!(trace_from_json(&h, &j).is_ok());
        j.steps[0].exit.insert("y".into(), 0.0);
        assert!(trace_from_json(&h, &j).unwrap_err().contains("unknown variable y"));
        j.steps[0].exit.remove("y");
        j.path[0].to = "b".into();
        assert!(trace_from_json(&h, &j).is_err());
        j.path[0].to = "a".into();
        j.steps[0].dwell = -1.0;
        assert!(trace_from_json(&h, &j).unwrap_err().contains("invalid dwell"));
    }
}
