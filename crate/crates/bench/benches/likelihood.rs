use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use wardrisk::likelihood::{segment_log_marginal, segment_log_marginal_grad};
use wardrisk_bench::{kernel, observations, rng};

fn gp_segment(c: &mut Criterion) {
    let mut r = rng(1);
    let params = kernel(&mut r, 3, 1);
    let mut group = c.benchmark_group("segment_log_marginal");
    for n in [10, 40, 160] {
        let obs = observations(&mut r, 3, n, n as f64 / 2.0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &obs, |b, obs| {
            b.iter(|| segment_log_marginal(black_box(obs), &params).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("segment_log_marginal_grad");
    for n in [10, 40] {
        let obs = observations(&mut r, 3, n, n as f64 / 2.0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &obs, |b, obs| {
            b.iter(|| segment_log_marginal_grad(black_box(obs), &params).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gp_segment);
criterion_main!(benches);
