//! Sequential against parallel LP checking in the breadth-first path search.

use std::collections::HashSet;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nlha_core::cegar::{cegar_check, search_paths, CegarConfig};
use nlha_core::par::Exec;
use nlha_core::parse_model;

/// A ring of `n` rooms with a doorway between every pair and an exit that
/// can only be taken once the clock passes a bound, so many paths are
/// feasible and few are pruned.
fn rooms(n: usize) -> String {
    let mut s = String::from("automaton rooms\nvar x in [0, 100], t in [0, 100];\nlocation entry {}\n");
    for i in 0..n {
        let rate = 1 + i % 3;
        s += &format!("location r{i} {{ invariant: x <= 50; flow: dx = {rate}; dt = 1; }}\n");
    }
    s += "location exit { flow: dx = 0; dt = 0; }\ninit entry;\nbad: exit;\n";
    s += "transition entry -> r0 { reset: x := 0, t := 0; }\n";
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += &format!("transition r{i} -> r{j} {{ guard: x >= {}; }}\n", i + j);
            }
        }
        s += &format!("transition r{i} -> exit {{ guard: t >= 40, x <= {}; }}\n", 10 + i);
    }
    s
}

fn search(c: &mut Criterion) {
    let h = parse_model(&rooms(5)).expect("generated model parses");
    let mut g = c.benchmark_group("search_paths");
    g.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        g.bench_with_input(BenchmarkId::new(format!("{exec:?}"), "rooms5_depth5"), &exec, |b, &exec| {
            b.iter(|| search_paths(&h, |t| t, 5, &mut HashSet::new(), exec, usize::MAX, false))
        });
    }
    g.finish();
}

fn loop_end_to_end(c: &mut Criterion) {
    let src = include_str!("../fixtures/thermostat.ha");
    let h = parse_model(src).expect("fixture parses");
    let mut g = c.benchmark_group("cegar_check");
    g.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let cfg = CegarConfig { exec, ..CegarConfig::default() };
        g.bench_with_input(BenchmarkId::new(format!("{exec:?}"), "thermostat"), &cfg, |b, cfg| {
            b.iter(|| cegar_check(&h, cfg).expect("valid configuration"))
        });
    }
    g.finish();
}

criterion_group!(benches, search, loop_end_to_end);
criterion_main!(benches);
