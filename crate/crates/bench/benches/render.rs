use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use splatcolor_core::rasterizer::{render_color, render_luminance};

fn render(c: &mut Criterion) {
    let mut group = c.benchmark_group("render");
    for size in [64, 128] {
        let bundle = splatcolor_bench::ring(size, 150);
        let cam = &bundle.cameras[0];
        let color = bundle.scene.with_ground_truth_colors().unwrap();
        group.bench_with_input(BenchmarkId::new("luminance", size), &size, |b, _| {
            b.iter(|| render_luminance(&bundle.scene, cam).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("color", size), &size, |b, _| {
            b.iter(|| render_color(&color, cam).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, render);
criterion_main!(benches);
