use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use wardrisk::scoring::score_trajectory;
use wardrisk::simulator::{benchmark_truth, sample_cohort, SimConfig};
use wardrisk::trajectory::{segment_posteriors, trajectory_log_likelihood, Horizon};
use wardrisk_bench::{observations, rng, trajectory_model};

fn recursion(c: &mut Criterion) {
    let mut r = rng(2);
    let model = trajectory_model(&mut r, 3, 3, 72);
    let mut group = c.benchmark_group("trajectory_log_likelihood");
    group.sample_size(20);
    for hours in [12.0, 36.0, 72.0] {
        let obs = observations(&mut r, 3, (hours * 0.75) as usize, hours);
        group.bench_with_input(BenchmarkId::from_parameter(hours), &obs, |b, obs| {
            b.iter(|| trajectory_log_likelihood(black_box(obs), hours, &model).unwrap())
        });
    }
    group.finish();

    let obs = observations(&mut r, 3, 27, 36.0);
    c.bench_function("segment_posteriors/terminal_36h", |b| {
        b.iter(|| {
            segment_posteriors(black_box(&obs), Horizon::Terminal(36.0), &model, 1e-3).unwrap()
        })
    });
}

fn scoring(c: &mut Criterion) {
    let truth = benchmark_truth();
    let (cohort, _) = sample_cohort(&SimConfig::new(truth.clone(), 8, 3)).unwrap();
    let record = cohort
        .patients
        .iter()
        .max_by_key(|p| p.events.len())
        .unwrap();
    let mut group = c.benchmark_group("score_trajectory");
    group.sample_size(10);
    group.bench_function(format!("{}_events", record.events.len()), |b| {
        b.iter(|| score_trajectory(&truth, black_box(record)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, recursion, scoring);
criterion_main!(benches);
