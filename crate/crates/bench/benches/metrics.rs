use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use privsim::metrics::{self, bootstrap_ci};
use privsim_bench::{coin_flips, question_samples};

fn per_question(c: &mut Criterion) {
    let mut g = c.benchmark_group("question_metrics");
    for support in [2, 5, 100] {
        let samples = question_samples(50, support, 200, 7);
        g.bench_with_input(BenchmarkId::from_parameter(support), &samples, |b, s| {
            b.iter(|| {
                for q in s {
                    black_box(metrics::question_metrics(q).unwrap());
                }
            })
        });
    }
    g.finish();
}

fn bootstrap(c: &mut Criterion) {
    let units = coin_flips(1000, 3);
    c.bench_function("bootstrap_1000x1000", |b| {
        b.iter(|| bootstrap_ci(black_box(&units), metrics::mean, 1000, 0.95, 1).unwrap())
    });
}

criterion_group!(benches, per_question, bootstrap);
criterion_main!(benches);
