//! Planner QP solve time across horizon lengths, on problems sampled from
//! a real closed-loop run.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use slopewalk_bench::walking_cases;
use slopewalk_core::qp::solve;

fn qp_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("qp_solve");
    for horizon in [5usize, 10, 20, 40] {
        let (config, cases) = walking_cases(32, horizon);
        let problems: Vec<_> = cases.iter().map(|case| case.problem(&config)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(horizon), &problems, |b, ps| {
            let mut k = 0usize;
            b.iter(|| {
                let sol = solve(&ps[k % ps.len()], None);
                k += 1;
                sol.iterations
            });
        });
    }
    group.finish();
}

criterion_group!(benches, qp_solve);
criterion_main!(benches);
