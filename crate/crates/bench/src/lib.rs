//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wardrisk::kernel::EpochKernelParams;
use wardrisk::likelihood::Observation;
use wardrisk::trajectory::{DurationParams, InitialEpochDist, NegBinomial, TrajectoryModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn kernel(rng: &mut ChaCha8Rng, streams: usize, rank: usize) -> EpochKernelParams {
    EpochKernelParams {
        mean: (0..streams).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        rank,
        factor: (0..streams * rank)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
        diag: (0..streams).map(|_| rng.gen_range(0.1..1.0)).collect(),
        length_scale: rng.gen_range(2.0..6.0),
        noise: (0..streams).map(|_| rng.gen_range(0.1..0.5)).collect(),
    }
}

/// `n` time-ordered observations spread over `[0, hours]`.
pub fn observations(
    rng: &mut ChaCha8Rng,
    streams: usize,
    n: usize,
    hours: f64,
) -> Vec<Observation> {
    let mut times: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..hours)).collect();
    times.sort_by(f64::total_cmp);
    times
        .into_iter()
        .map(|time| Observation {
            stream: rng.gen_range(0..streams),
            time,
            value: rng.gen_range(-2.0..2.0),
        })
        .collect()
}

pub fn trajectory_model(
    rng: &mut ChaCha8Rng,
    epochs: usize,
    streams: usize,
    t_max: usize,
) -> TrajectoryModel {
    TrajectoryModel {
        epochs: (0..epochs).map(|_| kernel(rng, streams, 1)).collect(),
        durations: DurationParams {
            t_max,
            epochs: (0..epochs)
                .map(|_| NegBinomial::with_mean(rng.gen_range(8.0..30.0), 3.0))
                .collect(),
        },
        initial: InitialEpochDist::uniform(epochs),
    }
}
