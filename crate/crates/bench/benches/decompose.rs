use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use splatcolor_core::decompose::decompose;

fn greedy(c: &mut Criterion) {
    let bundle = splatcolor_bench::ring(64, 400);
    let vis = splatcolor_bench::visibility_sets(&bundle);
    let mut group = c.benchmark_group("decompose");
    for k in [1, 4, 8] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| b.iter(|| decompose(&vis, k).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, greedy);
criterion_main!(benches);
