//! Random model generators shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlha_core::abstraction::{Abstraction, EdgeOrigin};
use nlha_core::lp::{check_path_feasible, PathCheck};
use nlha_core::{HybridAutomaton, LocId, Path, TransId};

pub const NAMES: [&str; 2] = ["x", "y"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn var_decl(nvars: usize) -> String {
    (0..nvars).map(|k| format!("{} in [0, 10]", NAMES[k])).collect::<Vec<_>>().join(", ")
}

pub fn constraint(rng: &mut ChaCha8Rng, nvars: usize) -> String {
    let b = rng.gen_range(0..=20) as f64 * 0.5;
    let lhs = if nvars == 2 && rng.gen_bool(0.3) {
        if rng.gen_bool(0.5) { "x + y" } else { "x - y" }.to_string()
    } else {
        NAMES[rng.gen_range(0..nvars)].to_string()
    };
    let op = if rng.gen_bool(0.5) { "<=" } else { ">=" };
    format!("{lhs} {op} {b}")
}

/// Resets every variable on leaving `entry`, then a random graph over
/// `nlocs` locations whose edges carry one random guard each.
fn skeleton(rng: &mut ChaCha8Rng, nvars: usize, locations: &[String]) -> String {
    let mut src = format!("automaton m\nvar {};\nlocation entry {{}}\n", var_decl(nvars));
    for l in locations {
        src += l;
        src.push('\n');
    }
    src += "init entry;\n";
    let resets: Vec<String> = (0..nvars).map(|k| format!("{} := {}", NAMES[k], rng.gen_range(1..=9))).collect();
    src += &format!("transition entry -> l0 {{ reset: {}; }}\n", resets.join(", "));
    let n = locations.len();
    for a in 0..n {
        for b in 0..n {
            if rng.gen_bool(0.6) {
                src += &format!("transition l{a} -> l{b} {{ guard: {}; }}\n", constraint(rng, nvars));
            }
        }
    }
    src
}

fn invariant(rng: &mut ChaCha8Rng, nvars: usize) -> String {
    if rng.gen_bool(0.5) {
        format!("invariant: {}; ", constraint(rng, nvars))
    } else {
        String::new()
    }
}

/// Constant or interval rates only. With `point_rates` every rate is a
/// single constant.
pub fn rate_model(seed: u64, point_rates: bool) -> String {
    let mut rng = rng(seed);
    let nvars = rng.gen_range(1..=2);
    let locations: Vec<String> = (0..rng.gen_range(2..=3))
        .map(|l| {
            let inv = invariant(&mut rng, nvars);
            let flows: Vec<String> = (0..nvars)
                .map(|k| {
                    let a = rng.gen_range(-4..=4) as f64 * 0.5;
                    if point_rates || rng.gen_bool(0.5) {
                        format!("d{} = {a};", NAMES[k])
                    } else {
                        format!("d{} in [{a}, {}];", NAMES[k], a + rng.gen_range(0..=4) as f64 * 0.5)
                    }
                })
                .collect();
            format!("location l{l} {{ {inv}flow: {} }}", flows.join(" "))
        })
        .collect();
    skeleton(&mut rng, nvars, &locations)
}

/// Polynomial and affine flows.
pub fn nonlinear_model(seed: u64) -> String {
    let mut rng = rng(seed);
    let nvars = rng.gen_range(1..=2);
    let locations: Vec<String> = (0..rng.gen_range(2..=3))
        .map(|l| {
            let inv = invariant(&mut rng, nvars);
            let flows: Vec<String> = (0..nvars)
                .map(|k| {
                    let v = NAMES[k];
                    let w = NAMES[rng.gen_range(0..nvars)];
                    let a = rng.gen_range(1..=4) as f64 * 0.5;
                    let rhs = match rng.gen_range(0..4) {
                        0 => format!("{a} - 0.1 * {v}^2"),
                        1 => format!("-{a} * {v} + 5"),
                        2 => format!("0.1 * {v} * {w} - {a}"),
                        _ => format!("{a}"),
                    };
                    format!("d{v} = {rhs};")
                })
                .collect();
            format!("location l{l} {{ {inv}flow: {} }}", flows.join(" "))
        })
        .collect();
    skeleton(&mut rng, nvars, &locations)
}

/// Random walk of at most `len` edges from the initial location.
pub fn random_path(h: &HybridAutomaton, seed: u64, len: usize) -> Path {
    let mut rng = rng(seed);
    let mut at = h.initial;
    let mut ts = Vec::new();
    for _ in 0..len {
        let out: Vec<TransId> = h.outgoing(at).collect();
        if out.is_empty() {
            break;
        }
        let t = out[rng.gen_range(0..out.len())];
        ts.push(t);
        at = h.transition(t).target;
    }
    Path::new(ts)
}

pub fn feasible(h: &HybridAutomaton, p: &Path) -> bool {
    matches!(check_path_feasible(h, p), Ok(PathCheck::Feasible(_)))
}

/// Every abstract path whose concrete edges spell `target`, allowing at
/// most `bridges` bridge edges in a row.
pub fn counterparts(a: &Abstraction, target: &[TransId], bridges: usize) -> Vec<Path> {
    fn go(a: &Abstraction, target: &[TransId], bridges: usize, at: LocId, prefix: &mut Vec<TransId>, pos: usize, run: usize, out: &mut Vec<Path>) {
        if pos == target.len() {
            out.push(Path::new(prefix.clone()));
        }
        for t in a.lha.outgoing(at) {
            let (pos2, run2) = match a.edge_origin[t.0] {
                EdgeOrigin::Concrete(c) if pos < target.len() && c == target[pos] => (pos + 1, 0),
                EdgeOrigin::Bridge { .. } if run < bridges => (pos, run + 1),
                _ => continue,
            };
            prefix.push(t);
            go(a, target, bridges, a.lha.transition(t).target, prefix, pos2, run2, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(a, target, bridges, a.lha.initial, &mut Vec::new(), 0, 0, &mut out);
    out
}
