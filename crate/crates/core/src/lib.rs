//! Reachability analysis for hybrid automata with nonlinear flows.
//!
//! The checker over-approximates a concrete automaton by a linear hybrid
//! automaton (constant rate intervals over location boxes), searches the
//! abstraction for paths to a bad location, decides each path by linear
//! programming, and replays feasible ones through numerical simulation of the
//! real dynamics. Where simulation and the LP witness drift apart the
//! offending location is split in two and its rates recomputed, until the
//! abstraction is precise enough to either rule out every bad path or produce
//! a counterexample that survives robust validation.

pub mod abstraction;
pub mod cegar;
pub mod expr;
pub mod interval;
pub mod lp;
pub mod model;
pub mod par;
pub mod parser;
pub mod refinement;
pub mod report;
pub mod simulation;

pub use expr::{EvalError, Expr};
pub use interval::{eval_interval, Interval, RateInterval, StateBox};
pub use model::{
    Flow, HybridAutomaton, LinearConstraint, LocId, Location, Path, Reset, Trace, TraceStep, TransId,
    Transition, VarId, Variable, Violation,
};
pub use parser::{parse_model, serialize_model, ParseError};
