//! Linear over-approximation of a concrete automaton and its refinement.
//!
//! Every location gets a box (declared ranges tightened by the invariant) and
//! every flow is replaced by its interval enclosure over that box. Splitting
//! a location by a constraint `C` yields two children with invariants
//! `inv + C` and `inv + not C`, smaller boxes and therefore tighter rates. The
//! genealogy is kept in a [`LocationTree`] so that abstract paths and traces
//! can be mapped back onto the concrete automaton.

use std::sync::Arc;

use crate::interval::{eval_interval, IntervalError, StateBox};
use crate::lp::{solve_lp, LinProgram, LpError, LpVarKind};
use crate::model::{
    Flow, HybridAutomaton, LinearConstraint, LocId, Location, Path, Trace, TraceStep, TransId, Transition, VarId,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AbstractionError {
    #[error("location {0}: unsatisfiable invariant")]
    UnsatisfiableInvariant(String),
    #[error("location {location}: cannot enclose flow of {var}: {source}")]
    Flow { location: String, var: String, source: IntervalError },
    #[error("location {0} is not a leaf of the current abstraction")]
    NotALeaf(usize),
    #[error("the initial location cannot be split")]
    InitialLocation,
    #[error("split constraint must have exactly one finite bound")]
    TwoSided,
    #[error("non-separating constraint")]
    NonSeparating,
    #[error("trace does not match the abstraction: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Index into [`LocationTree::nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Concrete location this node descends from.
    pub root: LocId,
    pub parent: Option<NodeId>,
    /// `(child(v, C), child(v, not C))`, created together.
    pub children: Option<(NodeId, NodeId)>,
    /// The constraint added by the split that created this node.
    pub split: Option<LinearConstraint>,
    /// Abstract location while this node is a leaf.
    pub leaf: Option<LocId>,
}

/// Forest of split histories, one tree per concrete location.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationTree {
    pub nodes: Vec<TreeNode>,
    /// Leaf node of every abstract location.
    leaf_of: Vec<NodeId>,
}

impl LocationTree {
    fn trivial(n: usize) -> Self {
        let nodes = (0..n)
            .map(|i| TreeNode { root: LocId(i), parent: None, children: None, split: None, leaf: Some(LocId(i)) })
            .collect();
        LocationTree { nodes, leaf_of: (0..n).map(NodeId).collect() }
    }

    pub fn node_of(&self, loc: LocId) -> Option<NodeId> {
        self.leaf_of.get(loc.0).copied()
    }

    /// Concrete location of an abstract one.
    pub fn root_of(&self, loc: LocId) -> Option<LocId> {
        self.node_of(loc).map(|n| self.nodes[n.0].root)
    }

    pub fn node(&self, n: NodeId) -> &TreeNode {
        &self.nodes[n.0]
    }

    pub fn leaves(&self) -> Vec<LocId> {
        self.nodes.iter().filter_map(|n| n.leaf).collect()
    }

    /// Split constraints from the root down to `n`.
    pub fn constraints_to(&self, n: NodeId) -> Vec<LinearConstraint> {
        let mut out = Vec::new();
        let mut cur = Some(n);
        while let Some(c) = cur {
            let node = &self.nodes[c.0];
            if let Some(s) = &node.split {
                out.push(s.clone());
            }
            cur = node.parent;
        }
        out.reverse();
        out
    }

    pub fn depth(&self, n: NodeId) -> usize {
        let mut d = 0;
        let mut cur = self.nodes[n.0].parent;
        while let Some(p) = cur {
            d += 1;
            cur = self.nodes[p.0].parent;
        }
        d
    }
}

/// Where an abstract edge comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeOrigin {
    Concrete(TransId),
    /// Bridge between the two children of a split node.
    Bridge { node: NodeId },
}

/// Identity of an abstract edge that survives later splits of unrelated
/// locations (transition ids do not).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeKey {
    pub source: NodeId,
    pub target: NodeId,
    pub origin: EdgeOrigin,
}

/// An LHA over-approximation together with its refinement history.
#[derive(Debug, Clone)]
pub struct Abstraction {
    pub lha: HybridAutomaton,
    pub tree: LocationTree,
    pub origin: Arc<HybridAutomaton>,
    /// One entry per `lha` transition.
    pub edge_origin: Vec<EdgeOrigin>,
    /// One box per `lha` location.
    pub boxes: Vec<StateBox>,
    /// Number of splits applied so far.
    pub version: usize,
}

/// Box of the region `ranges` intersected with `invariant`, tightened per
/// variable by LP. Strict bounds are treated as closed.
pub fn constrained_box(
    h: &HybridAutomaton,
    invariant: &[LinearConstraint],
    location: &str,
) -> Result<StateBox, AbstractionError> {
    let ranges = h.ranges();
    if invariant.is_empty() {
        return Ok(ranges);
    }
    let mut p = LinProgram::default();
    for (k, v) in h.vars.iter().enumerate() {
        p.add_var(v.name.clone(), LpVarKind::Entry { step: 0, var: k }, v.range.lo, v.range.hi);
    }
    for (j, c) in invariant.iter().enumerate() {
        p.add_row(c.coeffs.iter().map(|(v, a)| (v.0, *a)).collect(), c.lower, c.upper, format!("invariant #{j}"));
    }
    let mut out = ranges.clone();
    for k in 0..h.nvars() {
        for sign in [1.0, -1.0] {
            p.objective = vec![(k, sign)];
            let o = solve_lp(&p)?;
            if !o.is_feasible() {
                return Err(AbstractionError::UnsatisfiableInvariant(location.to_string()));
            }
            let x = o.assignment[k];
            if sign > 0.0 {
                out.0[k].lo = ranges.0[k].lo.max(x).min(ranges.0[k].hi);
            } else {
                out.0[k].hi = ranges.0[k].hi.min(x).max(out.0[k].lo);
            }
        }
    }
    Ok(out)
}

/// Box of a location of `h`. The initial location gets the declared ranges.
pub fn location_box(h: &HybridAutomaton, loc: LocId) -> Result<StateBox, AbstractionError> {
    let l = h.location(loc);
    constrained_box(h, &l.invariant, &l.name)
}

/// Interval enclosure of every flow of `loc` over `b`. Rate-interval flows
/// are kept as they are.
pub fn abstract_flows(
    h: &HybridAutomaton,
    loc: &Location,
    b: &StateBox,
) -> Result<Vec<(VarId, Flow)>, AbstractionError> {
    loc.flows
        .iter()
        .map(|(v, f)| {
            let rate = match f {
                Flow::Interval(i) => *i,
                Flow::Expr(e) => eval_interval(e, b).map_err(|source| AbstractionError::Flow {
                    location: loc.name.clone(),
                    var: h.vars[v.0].name.clone(),
                    source,
                })?,
            };
            Ok((*v, Flow::Interval(rate)))
        })
        .collect()
}

/// Initial abstraction: same graph, interval flows over each location box.
pub fn build_lha(h: &HybridAutomaton) -> Result<Abstraction, AbstractionError> {
    let mut lha = h.clone();
    let mut boxes = Vec::with_capacity(h.locations.len());
    for (i, loc) in h.locations.iter().enumerate() {
        let b = location_box(h, LocId(i))?;
        lha.locations[i].flows = abstract_flows(h, loc, &b)?;
        boxes.push(b);
    }
    Ok(Abstraction {
        lha,
        tree: LocationTree::trivial(h.locations.len()),
        origin: Arc::new(h.clone()),
        edge_origin: (0..h.transitions.len()).map(|i| EdgeOrigin::Concrete(TransId(i))).collect(),
        boxes,
        version: 0,
    })
}

impl Abstraction {
    pub fn edge_key(&self, t: TransId) -> EdgeKey {
        let tr = self.lha.transition(t);
        EdgeKey {
            source: self.tree.leaf_of[tr.source.0],
            target: self.tree.leaf_of[tr.target.0],
            origin: self.edge_origin[t.0],
        }
    }

    pub fn is_bridge(&self, t: TransId) -> bool {
        matches!(self.edge_origin[t.0], EdgeOrigin::Bridge { .. })
    }

    /// Splits leaf `v` by the one-sided constraint `c` (see the module docs).
    /// `v` keeps its id as the `c` child; the other child is appended.
    pub fn split(&self, v: LocId, c: &LinearConstraint) -> Result<Abstraction, AbstractionError> {
        if v == self.lha.initial {
            return Err(AbstractionError::InitialLocation);
        }
        let node = self.tree.node_of(v).ok_or(AbstractionError::NotALeaf(v.0))?;
        let neg = c.closed_complement().ok_or(AbstractionError::TwoSided)?;
        let c = LinearConstraint { strict_lower: false, strict_upper: false, ..c.clone() };
        let range = self.boxes[v.0].linear_range(&c.coeffs);
        let bound = if c.upper.is_finite() { c.upper } else { c.lower };
        if !(range.lo < bound && bound < range.hi) {
            return Err(AbstractionError::NonSeparating);
        }

        let parent = self.lha.location(v);
        let root = self.tree.node(node).root;
        let concrete = self.origin.location(root);
        let w = LocId(self.lha.locations.len());
        let mut children = Vec::with_capacity(2);
        for (suffix, extra) in [("0", &c), ("1", &neg)] {
            let mut invariant = parent.invariant.clone();
            invariant.push(extra.clone());
            let name = format!("{}.{suffix}", parent.name);
            let b = constrained_box(&self.origin, &invariant, &name)?;
            let flows = abstract_flows(&self.origin, concrete, &b)?;
            children.push((Location { name, invariant, flows }, b));
        }
        let (loc_b, box_b) = children.pop().expect("two children");
        let (loc_a, box_a) = children.pop().expect("two children");

        let mut lha = self.lha.clone();
        lha.locations[v.0] = loc_a;
        lha.locations.push(loc_b);
        let mut boxes = self.boxes.clone();
        boxes[v.0] = box_a;
        boxes.push(box_b);
        if lha.bad.contains(&v) {
            lha.bad.insert(w);
        }

        let mut transitions = Vec::with_capacity(self.lha.transitions.len() + 8);
        let mut edge_origin = Vec::with_capacity(transitions.capacity());
        for (tr, origin) in self.lha.transitions.iter().zip(&self.edge_origin) {
            let sources: &[LocId] = if tr.source == v { &[v, w] } else { &[tr.source] };
            let targets: &[LocId] = if tr.target == v { &[v, w] } else { &[tr.target] };
            for &s in sources {
                for &t in targets {
                    transitions.push(Transition { source: s, target: t, ..tr.clone() });
                    edge_origin.push(*origin);
                }
            }
        }
        transitions.push(Transition { source: v, target: w, guard: vec![c.clone()], resets: Vec::new() });
        transitions.push(Transition { source: w, target: v, guard: vec![neg.clone()], resets: Vec::new() });
        edge_origin.push(EdgeOrigin::Bridge { node });
        edge_origin.push(EdgeOrigin::Bridge { node });
        lha.transitions = transitions;

        let mut tree = self.tree.clone();
        let a = NodeId(tree.nodes.len());
        let b = NodeId(a.0 + 1);
        tree.nodes.push(TreeNode { root, parent: Some(node), children: None, split: Some(c), leaf: Some(v) });
        tree.nodes.push(TreeNode { root, parent: Some(node), children: None, split: Some(neg), leaf: Some(w) });
        tree.nodes[node.0].children = Some((a, b));
        tree.nodes[node.0].leaf = None;
        tree.leaf_of[v.0] = a;
        tree.leaf_of.push(b);

        Ok(Abstraction {
            lha,
            tree,
            origin: Arc::clone(&self.origin),
            edge_origin,
            boxes,
            version: self.version + 1,
        })
    }

    /// Maps an abstract path onto the concrete automaton. Bridge edges are
    /// dropped, which merges the steps on either side of them.
    pub fn concretize_path(&self, path: &Path) -> Result<Path, AbstractionError> {
        let mut out = Vec::with_capacity(path.len());
        for t in &path.transitions {
            match self.edge_origin.get(t.0) {
                Some(EdgeOrigin::Concrete(c)) => out.push(*c),
                Some(EdgeOrigin::Bridge { .. }) => {}
                None => return Err(AbstractionError::Mismatch(format!("unknown transition {}", t.0))),
            }
        }
        Ok(Path::new(out))
    }

    /// Maps an abstract trace onto the concrete automaton. Steps joined by a
    /// bridge become one step: dwell times add up, the entry valuation comes
    /// from the first merged step and the exit valuation from the last.
    pub fn concretize_trace(&self, tr: &Trace) -> Result<Trace, AbstractionError> {
        if tr.steps.len() != tr.path.len() {
            return Err(AbstractionError::Mismatch("one step per transition expected".into()));
        }
        let mut steps: Vec<TraceStep> = Vec::with_capacity(tr.steps.len());
        for (t, s) in tr.path.transitions.iter().zip(&tr.steps) {
            let bridge = match self.edge_origin.get(t.0) {
                Some(o) => matches!(o, EdgeOrigin::Bridge { .. }),
                None => return Err(AbstractionError::Mismatch(format!("unknown transition {}", t.0))),
            };
            let root = self
                .tree
                .root_of(s.location)
                .ok_or_else(|| AbstractionError::Mismatch(format!("unknown location {}", s.location.0)))?;
            match steps.last_mut() {
                Some(prev) if bridge => {
                    if prev.location != root {
                        return Err(AbstractionError::Mismatch("bridge between different roots".into()));
                    }
                    prev.dwell += s.dwell;
                    prev.exit = s.exit.clone();
                    prev.spans.extend(s.spans.iter().copied());
                }
                _ => steps.push(TraceStep {
                    location: root,
                    dwell: s.dwell,
                    entry: s.entry.clone(),
                    exit: s.exit.clone(),
                    spans: s.spans.clone(),
                }),
            }
        }
        Ok(Trace { path: self.concretize_path(&tr.path)?, steps })
    }

    /// The abstraction in the model format, with interval flows.
    pub fn dump(&self) -> String {
        crate::parser::serialize_model(&self.lha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::interval::Interval;
    use crate::lp::{check_path_feasible, PathCheck};
    use crate::parser::parse_model;

    const DECAY: &str = "automaton decay
var x in [-10, 10];
location entry {}
location v { invariant: x >= 1, x <= 4; flow: dx = -x; }
location done { flow: dx = 0; }
init entry;
bad: done;
transition entry -> v { reset: x := 4; }
transition v -> done { guard: x <= 1.5; }
";

    fn rate(a: &Abstraction, loc: usize) -> Interval {
        a.lha.locations[loc].flows[0].1.as_rate().unwrap()
    }

    fn close(i: Interval, lo: f64, hi: f64) -> bool {
        (i.lo - lo).abs() < 1e-12 && (i.hi - hi).abs() < 1e-12
    }

    #[test]
    fn box_reads_invariant_bounds() {
        let h = parse_model(DECAY).unwrap();
        assert_eq!(location_box(&h, LocId(1)).unwrap().0[0], Interval::new(1.0, 4.0));
        assert_eq!(location_box(&h, LocId(2)).unwrap().0[0], Interval::new(-10.0, 10.0));
    }

    #[test]
    fn empty_invariant_region_is_an_error() {
        let src = DECAY.replace("x >= 1, x <= 4", "x <= 0, x >= 1");
        let h = parse_model(&src).unwrap();
        assert_eq!(
            location_box(&h, LocId(1)),
            Err(AbstractionError::UnsatisfiableInvariant("v".into()))
        );
        assert!(build_lha(&h).unwrap_err().to_string().contains("unsatisfiable invariant"));
    }

    #[test]
    fn affine_flow_over_box() {
        let src = DECAY.replace("x >= 1, x <= 4; flow: dx = -x", "x >= 18, x <= 22; flow: dx = 5 - 0.1 * x")
            .replace("x := 4", "x := 20")
            .replace("[-10, 10]", "[0, 40]");
        let a = build_lha(&parse_model(&src).unwrap()).unwrap();
        let r = rate(&a, 1);
        assert!((r.lo - 2.8).abs() < 1e-12 && (r.hi - 3.2).abs() < 1e-12);
        assert!(a.lha.is_linear());
    }

    #[test]
    fn linear_input_is_unchanged() {
        let src = DECAY.replace("dx = -x", "dx in [-2, -1]").replace("dx = 0", "dx in [0, 0]");
        let h = parse_model(&src).unwrap();
        let a = build_lha(&h).unwrap();
        assert_eq!(a.lha, h);
        assert_eq!(a.tree.leaves(), vec![LocId(0), LocId(1), LocId(2)]);
    }

    #[test]
    fn split_tightens_child_rates() {
        let h = parse_model(DECAY).unwrap();
        let a = build_lha(&h).unwrap();
        assert!(close(rate(&a, 1), -4.0, -1.0));
        let s = a.split(LocId(1), &LinearConstraint::var_le(VarId(0), 2.0)).unwrap();
        assert!(close(rate(&s, 1), -2.0, -1.0));
        assert!(close(rate(&s, 3), -4.0, -2.0));
        assert_eq!(s.boxes[1].0[0], Interval::new(1.0, 2.0));
        assert_eq!(s.boxes[3].0[0], Interval::new(2.0, 4.0));
        assert_eq!(s.lha.locations[1].name, "v.0");
        assert_eq!(s.lha.locations[3].name, "v.1");
        // one in, one out: 2 + 1 + 1 + 2
        assert_eq!(s.lha.transitions.len(), 6);
        assert_eq!(s.lha.validate(), vec![]);
        assert_eq!(s.tree.root_of(LocId(3)), Some(LocId(1)));
        assert_eq!(s.version, 1);
    }

    #[test]
    fn split_edge_count_matches_duplication() {
        let src = DECAY.replace("transition v -> done", "transition v -> v { guard: x >= 3; }\ntransition v -> done");
        let a = build_lha(&parse_model(&src).unwrap()).unwrap();
        let s = a.split(LocId(1), &LinearConstraint::var_ge(VarId(0), 2.5)).unwrap();
        // entry->v twice, self-loop four times, v->done twice, two bridges
        assert_eq!(s.lha.transitions.len(), 10);
        let loops = s.lha.transitions.iter().filter(|t| t.guard.first().is_some_and(|g| g.lower == 3.0)).count();
        assert_eq!(loops, 4);
    }

    #[test]
    fn non_separating_and_illegal_splits() {
        let a = build_lha(&parse_model(DECAY).unwrap()).unwrap();
        let c = LinearConstraint::var_le(VarId(0), 100.0);
        assert_eq!(a.split(LocId(1), &c).unwrap_err(), AbstractionError::NonSeparating);
        let two = LinearConstraint::new(vec![(VarId(0), 1.0)], 1.0, 2.0);
        assert_eq!(a.split(LocId(1), &two).unwrap_err(), AbstractionError::TwoSided);
        let mid = LinearConstraint::var_le(VarId(0), 0.0);
        assert_eq!(a.split(LocId(0), &mid).unwrap_err(), AbstractionError::InitialLocation);
        assert_eq!(a.split(LocId(9), &mid).unwrap_err(), AbstractionError::NotALeaf(9));
    }

    #[test]
    fn bad_status_is_inherited() {
        let a = build_lha(&parse_model(DECAY).unwrap()).unwrap();
        let s = a.split(LocId(2), &LinearConstraint::var_le(VarId(0), 0.0)).unwrap();
        assert!(s.lha.is_bad(LocId(2)) && s.lha.is_bad(LocId(3)));
    }

    #[test]
    fn unsplit_concretization_is_identity() {
        let a = build_lha(&parse_model(DECAY).unwrap()).unwrap();
        let p = Path::new(vec![TransId(0), TransId(1)]);
        let PathCheck::Feasible(tr) = check_path_feasible(&a.lha, &p).unwrap() else {
            panic!("feasible")
        };
        assert_eq!(a.concretize_path(&p).unwrap(), p);
        assert_eq!(a.concretize_trace(&tr).unwrap(), tr);
    }

    #[test]
    fn bridge_steps_collapse() {
        let a = build_lha(&parse_model(DECAY).unwrap()).unwrap();
        let s = a.split(LocId(1), &LinearConstraint::var_ge(VarId(0), 2.0)).unwrap();
        // entry -> v.0 (x >= 2) -> bridge -> v.1 -> done
        let find = |src: usize, dst: usize| {
            TransId(s.lha.transitions.iter().position(|t| t.source == LocId(src) && t.target == LocId(dst)).unwrap())
        };
        let p = Path::new(vec![find(0, 1), find(1, 3), find(3, 2)]);
        let PathCheck::Feasible(tr) = check_path_feasible(&s.lha, &p).unwrap() else {
            panic!("feasible")
        };
        let c = s.concretize_trace(&tr).unwrap();
        assert_eq!(c.path, Path::new(vec![TransId(0), TransId(1)]));
        assert_eq!(c.steps.len(), 2);
        assert_eq!(c.steps[0].location, LocId(1));
        assert!((c.steps[0].dwell - (tr.steps[0].dwell + tr.steps[1].dwell)).abs() < 1e-15);
        assert_eq!(c.steps[0].entry, tr.steps[0].entry);
        assert_eq!(c.steps[0].exit, tr.steps[1].exit);
        assert_eq!(c.steps[0].spans.len(), 2);
    }

    #[test]
    fn two_generations_map_to_the_root() {
        let a = build_lha(&parse_model(DECAY).unwrap()).unwrap();
        let s = a.split(LocId(1), &LinearConstraint::var_le(VarId(0), 2.5)).unwrap();
        let s = s.split(LocId(3), &LinearConstraint::var_le(VarId(0), 3.25)).unwrap();
        assert_eq!(s.tree.root_of(LocId(4)), Some(LocId(1)));
        let n = s.tree.node_of(LocId(4)).unwrap();
        assert_eq!(s.tree.depth(n), 2);
        assert_eq!(s.tree.constraints_to(n).len(), 2);
        assert_eq!(s.lha.locations[4].name, "v.1.1");
        let mut leaves = s.tree.leaves();
        leaves.sort();
        assert_eq!(leaves, vec![LocId(0), LocId(1), LocId(2), LocId(3), LocId(4)]);
    }

    #[test]
    fn dump_reparses() {
        let a = build_lha(&parse_model(DECAY).unwrap()).unwrap();
        let s = a.split(LocId(1), &LinearConstraint::var_le(VarId(0), 2.0)).unwrap();
        let back = parse_model(&s.dump()).unwrap();
        assert_eq!(back, s.lha);
    }

    #[test]
    fn expression_error_is_reported() {
        let mut h = parse_model(DECAY).unwrap();
        h.locations[1].flows[0].1 = Flow::Expr(Expr::div(Expr::Const(1.0), Expr::var(0)));
        h.locations[1].invariant.clear();
        assert!(matches!(build_lha(&h), Err(AbstractionError::Flow { .. })));
    }
}
