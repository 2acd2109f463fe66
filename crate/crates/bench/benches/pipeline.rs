//! End-to-end costs: one planner tick (linearize + condense + solve) and
//! one second of full closed-loop simulation.

use criterion::{criterion_group, criterion_main, Criterion};
use slopewalk_bench::walking_cases;
use slopewalk_core::sim::{simulate, SimConfig};

fn planner_tick(c: &mut Criterion) {
    let (config, cases) = walking_cases(32, 10);
    c.bench_function("planner_tick_h10", |b| {
        let mut k = 0usize;
        b.iter(|| {
            cases[k % cases.len()].solve(&config);
            k += 1;
        });
    });
}

fn closed_loop_second(c: &mut Criterion) {
    let mut cfg = SimConfig::reference();
    cfg.duration = 1.0;
    let mut group = c.benchmark_group("closed_loop");
    group.sample_size(10);
    group.bench_function("one_second_walk", |b| {
        b.iter(|| simulate(&cfg).expect("reference configuration must walk"));
    });
    group.finish();
}

criterion_group!(benches, planner_tick, closed_loop_second);
criterion_main!(benches);
