use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wardrisk::cohort::Outcome;
use wardrisk::eval::{dual_threshold_eval, roc_curve, uniform_grid};
use wardrisk::scoring::{score_cohort, ScoreOptions, ScorePoint, ScoreTrace};
use wardrisk::simulator::{benchmark_truth, sample_cohort, SimConfig};

fn random_traces(rng: &mut ChaCha8Rng, n: usize, prevalence: f64) -> Vec<ScoreTrace> {
    (0..n)
        .map(|i| {
            let outcome = if rng.gen::<f64>() < prevalence {
                Outcome::Icu
            } else {
                Outcome::Discharged
            };
            let points = (0..5)
                .map(|j| ScorePoint {
                    time: j as f64,
                    risk: rng.gen(),
                })
                .collect();
            ScoreTrace {
                patient_id: format!("p{i}"),
                outcome,
                endpoint_time: 5.0,
                points,
            }
        })
        .collect()
}

#[test]
fn uninformative_scores_give_auc_near_prevalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let grid = uniform_grid(101);
    let mut gaps = Vec::new();
    for _ in 0..20 {
        let traces = random_traces(&mut rng, 2000, 0.1);
        let positives = traces.iter().filter(|t| t.outcome == Outcome::Icu).count() as f64;
        let auc = roc_curve(&traces, Some(&grid)).unwrap().auc;
        gaps.push(auc - positives / traces.len() as f64);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean_gap.abs() < 0.01, "mean AUC - prevalence = {mean_gap}");
}

#[test]
fn stricter_discharge_cannot_raise_auc() {
    let truth = benchmark_truth();
    let (cohort, _) = sample_cohort(&SimConfig::new(truth.clone(), 600, 42)).unwrap();
    let traces = score_cohort(&truth, &cohort, &ScoreOptions::default()).unwrap();
    let grid = uniform_grid(201);
    let auc = |l: f64| {
        dual_threshold_eval(
            &traces,
            l,
            Some(&grid[grid.iter().position(|&u| u > 0.2).unwrap()..]),
        )
        .unwrap()
        .auc
    };
    let (a, b, c) = (auc(0.01), auc(0.05), auc(0.2));
    assert!(a >= b && b >= c, "{a} {b} {c}");
}
