use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cohort::{default_stream_catalog, default_vocabulary, StaticEncoder};
use crate::kernel::{EpochKernelParams, LengthScaleBounds};
use crate::likelihood::Standardizer;
use crate::mixture::{GatingParams, ModelParams, MODEL_SCHEMA_VERSION};
use crate::trajectory::{DurationParams, InitialEpochDist, NegBinomial, TrajectoryModel};

/// Rough adult ward location and spread of each catalog stream, used to map
/// model units to raw units in simulated cohorts.
pub fn typical_stream_scale(stream: usize) -> (f64, f64) {
    const SCALES: [(f64, f64); 21] = [
        (70.0, 12.0),  // diastolic bp
        (3.7, 0.5),    // eye opening
        (14.5, 1.2),   // glasgow coma score
        (85.0, 15.0),  // heart rate
        (18.0, 3.5),   // respiratory rate
        (36.9, 0.5),   // temperature
        (1.0, 0.8),    // oxygen device
        (96.0, 2.5),   // oxygen saturation
        (5.8, 0.6),    // motor response
        (4.6, 0.8),    // verbal response
        (125.0, 20.0), // systolic bp
        (130.0, 40.0), // glucose
        (20.0, 12.0),  // urea nitrogen
        (8.5, 4.0),    // white cells
        (1.1, 0.6),    // creatinine
        (11.0, 2.0),   // hemoglobin
        (220.0, 90.0), // platelets
        (4.1, 0.5),    // potassium
        (138.0, 4.0),  // sodium
        (25.0, 3.5),   // total co2
        (103.0, 4.5),  // chloride
    ];
    SCALES[stream % SCALES.len()]
}

/// Shape and per-component parameters of a synthetic ground truth.
pub struct TruthDesign {
    pub phenotypes: usize,
    pub epochs: usize,
    pub streams: usize,
    pub rank: usize,
    pub t_max: usize,
    pub prior_icu: f64,
}

impl TruthDesign {
    /// Assembles a model. `epoch(v, z, k)` gives the kernel of epoch `k` for
    /// status `v` and phenotype `z`; `duration(v, z, k)` its duration law;
    /// `initial(v, z)` the starting-epoch law; `gate(z, feature)` the gate
    /// weights of rows `1..G`.
    pub fn build(
        &self,
        epoch: impl Fn(usize, usize, usize) -> EpochKernelParams,
        duration: impl Fn(usize, usize, usize) -> NegBinomial,
        initial: impl Fn(usize, usize) -> Vec<f64>,
        gate: impl Fn(usize, usize) -> f64,
    ) -> ModelParams {
        let vocabulary = default_vocabulary();
        let encoder = StaticEncoder {
            vocabulary,
            age_mean: 62.0,
            age_sd: 17.0,
        };
        let f = encoder.len();
        let component = |v: usize, z: usize| TrajectoryModel {
            epochs: (0..self.epochs).map(|k| epoch(v, z, k)).collect(),
            durations: DurationParams {
                t_max: self.t_max,
                epochs: (0..self.epochs).map(|k| duration(v, z, k)).collect(),
            },
            initial: InitialEpochDist(initial(v, z)),
        };
        let mut gating = GatingParams::zeros(self.phenotypes, f);
        for z in 1..self.phenotypes {
            for i in 0..f {
                gating.weights[z][i] = gate(z, i);
            }
        }
        let (mean, sd) = (0..self.streams).map(typical_stream_scale).unzip();
        ModelParams {
            schema_version: MODEL_SCHEMA_VERSION,
            phenotypes: self.phenotypes,
            epochs: self.epochs,
            rank: self.rank,
            stable: (0..self.phenotypes).map(|z| component(0, z)).collect(),
            deteriorating: (0..self.phenotypes).map(|z| component(1, z)).collect(),
            gating,
            prior_icu: self.prior_icu,
            encoder,
            standardizer: Standardizer { mean, sd },
            stream_catalog: default_stream_catalog()[..self.streams].to_vec(),
            length_scale_bounds: LengthScaleBounds::default(),
            fit_report: None,
        }
    }
}

/// Offset of the admission-floor block in the static encoding.
const FLOOR_OFFSET: usize = 4;

fn kernel(
    mean: Vec<f64>,
    factor: Vec<f64>,
    diag: f64,
    length_scale: f64,
    noise: f64,
) -> EpochKernelParams {
    let d = mean.len();
    let rank = factor.len() / d;
    EpochKernelParams {
        mean,
        rank,
        factor,
        diag: vec![diag; d],
        length_scale,
        noise: vec![noise; d],
    }
}

/// Two phenotypes, three epochs, three streams. Epoch means of neighbouring
/// epochs, of the two phenotypes and of the two statuses differ by at least
/// two marginal standard deviations on some stream. Half of the stays end in
/// a transfer so both statuses are well represented.
pub fn recovery_truth() -> ModelParams {
    let design = TruthDesign {
        phenotypes: 2,
        epochs: 3,
        streams: 3,
        rank: 1,
        t_max: 30,
        prior_icu: 0.5,
    };
    let epoch_shape = [[-2.0, 2.0, 0.0], [0.0, 0.0, 2.0], [2.0, -2.0, 0.0]];
    design.build(
        |v, z, k| {
            let mut mean = epoch_shape[k].to_vec();
            if z == 1 {
                mean[2] += 3.0;
                mean[0] -= 1.0;
            }
            if v == 1 {
                mean[0] += 2.5;
                mean[1] += 1.0;
            }
            kernel(mean, vec![0.3, 0.2, -0.2], 0.25, 3.0, 0.1)
        },
        |_, z, k| NegBinomial::with_mean([5.0, 7.0, 6.0][k] + z as f64, 4.0),
        |v, _| {
            if v == 0 {
                vec![0.6, 0.3, 0.1]
            } else {
                vec![0.5, 0.3, 0.2]
            }
        },
        |_, i| match i {
            i if (FLOOR_OFFSET..FLOOR_OFFSET + 3).contains(&i) => -1.5,
            i if (FLOOR_OFFSET + 3..FLOOR_OFFSET + 6).contains(&i) => 1.5,
            _ => 0.0,
        },
    )
}

/// The standard benchmark: ward-like prevalence, two phenotypes chosen by
/// the admission floor, and statuses whose early trajectories cross between
/// phenotypes: a deteriorating stay of phenotype 1 looks like a stable stay
/// of phenotype 2 until its final epoch.
pub fn benchmark_truth() -> ModelParams {
    let design = TruthDesign {
        phenotypes: 2,
        epochs: 3,
        streams: 3,
        rank: 1,
        t_max: 48,
        prior_icu: 0.09,
    };
    design.build(
        |v, z, k| {
            let base = z as f64 * 1.2;
            let lift = if v == 1 {
                1.2 + if k == 2 { 1.0 } else { 0.3 * k as f64 }
            } else {
                0.0
            };
            let mean = vec![base + lift, -0.5 * base - 0.5 * lift, 0.4 * lift];
            kernel(mean, vec![0.5, 0.3, 0.2], 0.3, 6.0, 0.5)
        },
        |v, _, k| NegBinomial::with_mean(if v == 1 && k == 2 { 8.0 } else { 10.0 }, 3.0),
        |_, _| vec![0.5, 0.3, 0.2],
        |_, i| match i {
            i if (FLOOR_OFFSET..FLOOR_OFFSET + 3).contains(&i) => -3.0,
            i if (FLOOR_OFFSET + 3..FLOOR_OFFSET + 6).contains(&i) => 3.0,
            _ => 0.0,
        },
    )
}

/// A model with the operating point of the original study: four phenotypes,
/// twelve epochs, all 21 streams, rank-3 task covariances. Parameters are
/// drawn from `seed`.
pub fn paper_scale_truth(seed: u64) -> ModelParams {
    let design = TruthDesign {
        phenotypes: 4,
        epochs: 12,
        streams: 21,
        rank: 3,
        t_max: 168,
        prior_icu: 0.09,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = |n: usize, scale: f64| -> Vec<f64> {
        (0..n)
            .map(|_| scale * (rng.gen::<f64>() * 2.0 - 1.0))
            .collect()
    };
    let drift = table(4 * 21, 1.0);
    let lift = table(4 * 21, 0.8);
    let factors = table(2 * 4 * 12 * 21 * 3, 0.3);
    let gates = table(4 * 34, 1.0);
    design.build(
        |v, z, k| {
            let progress = k as f64 / 11.0;
            let mean = (0..21)
                .map(|u| {
                    let d = drift[z * 21 + u] * (progress - 0.5);
                    let l = if v == 1 {
                        lift[z * 21 + u] * (0.3 + progress)
                    } else {
                        0.0
                    };
                    d + l
                })
                .collect();
            let off = ((v * 4 + z) * 12 + k) * 63;
            kernel(mean, factors[off..off + 63].to_vec(), 0.3, 8.0, 0.2)
        },
        |_, _, k| NegBinomial::with_mean(6.0 + (k % 3) as f64, 3.0),
        |_, _| {
            let mut p = vec![0.02; 12];
            p[0] = 1.0 - 0.02 * 11.0;
            p
        },
        |z, i| gates[z * 34 + i % 34],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_produce_valid_models() {
        for p in [recovery_truth(), benchmark_truth(), paper_scale_truth(4)] {
            p.validate().unwrap();
        }
        let large = paper_scale_truth(1);
        assert_eq!(
            (large.phenotypes, large.epochs, large.streams()),
            (4, 12, 21)
        );
    }

    #[test]
    fn recovery_means_are_well_separated() {
        let p = recovery_truth();
        let sd = |e: &EpochKernelParams, u: usize| {
            let cov = e.task_cov();
            (cov[u * 3 + u] + e.noise[u]).sqrt()
        };
        let all: Vec<&EpochKernelParams> = p
            .stable
            .iter()
            .chain(&p.deteriorating)
            .flat_map(|m| &m.epochs)
            .collect();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                let gap = (0..3)
                    .map(|u| (a.mean[u] - b.mean[u]).abs() / sd(a, u).max(sd(b, u)))
                    .fold(0.0, f64::max);
                assert!(gap >= 2.0, "{:?} vs {:?}", a.mean, b.mean);
            }
        }
    }
}
