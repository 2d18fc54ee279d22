mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use wardrisk::cohort::Outcome;
use wardrisk::kernel::EpochKernelParams;
use wardrisk::mixture::{
    class_conditional_log_likelihood, cohort_log_likelihood, count_parameters, em_fit,
    gating_probabilities, EmConfig, ModelParams,
};
use wardrisk::simulator::{recovery_truth, sample_cohort, SimConfig, TruthDesign};
use wardrisk::trajectory::{trajectory_log_likelihood, NegBinomial};

fn small_cohort(truth: &ModelParams, n: usize, seed: u64) -> wardrisk::cohort::Cohort {
    sample_cohort(&SimConfig::new(truth.clone(), n, seed))
        .unwrap()
        .0
}

#[test]
fn two_phenotypes_is_a_direct_two_term_sum() {
    let truth = recovery_truth();
    let cohort = small_cohort(&truth, 6, 3);
    for record in &cohort.patients {
        let t = record.endpoint_time * 0.6;
        let y = truth.features(record).unwrap();
        let gamma = gating_probabilities(&y, &truth.gating);
        let obs = truth.observations(record, t);
        let cells = t.floor() as usize + 1;
        for outcome in [Outcome::Discharged, Outcome::Icu] {
            let terms: Vec<f64> = (0..2)
                .map(|z| {
                    gamma[z]
                        * brute_force_log_likelihood(
                            &obs,
                            cells,
                            false,
                            truth.trajectory(outcome, z),
                        )
                        .exp()
                })
                .collect();
            let want = (terms[0] + terms[1]).ln();
            let got = class_conditional_log_likelihood(record, t, outcome, &truth).unwrap();
            assert!(relative_error(got, want) <= 1e-9, "{got} vs {want}");
        }
    }
}

#[test]
fn one_phenotype_equals_the_trajectory_likelihood() {
    let mut truth = recovery_truth();
    truth.phenotypes = 1;
    truth.stable.truncate(1);
    truth.deteriorating.truncate(1);
    truth.gating.weights.truncate(1);
    truth.validate().unwrap();
    let cohort = small_cohort(&truth, 10, 4);
    for record in &cohort.patients {
        let t = record.endpoint_time;
        let obs = truth.observations(record, t);
        for outcome in [Outcome::Discharged, Outcome::Icu] {
            let got = class_conditional_log_likelihood(record, t, outcome, &truth).unwrap();
            let want = trajectory_log_likelihood(&obs, t, truth.trajectory(outcome, 0)).unwrap();
            assert_eq!(got, want);
        }
    }
}

#[test]
fn phenotype_relabeling_leaves_likelihoods_unchanged() {
    let truth = recovery_truth();
    let mut swapped = truth.clone();
    swapped.stable.swap(0, 1);
    swapped.deteriorating.swap(0, 1);
    // Swapped rows [w1, w0] shifted so the reference row stays zero.
    let w1 = &truth.gating.weights[1];
    swapped.gating.weights = vec![vec![0.0; w1.len()], w1.iter().map(|v| -v).collect()];
    let cohort = small_cohort(&truth, 12, 5);
    for record in &cohort.patients {
        let t = record.endpoint_time;
        for outcome in [Outcome::Discharged, Outcome::Icu] {
            let a = class_conditional_log_likelihood(record, t, outcome, &truth).unwrap();
            let b = class_conditional_log_likelihood(record, t, outcome, &swapped).unwrap();
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

fn tally(params: &ModelParams) -> usize {
    let mut n = 1;
    for model in params.stable.iter().chain(&params.deteriorating) {
        for e in &model.epochs {
            n += e.mean.len() + e.factor.len() + e.diag.len() + 1 + e.noise.len();
        }
        n += 2 * model.durations.epochs.len();
        n += model.initial.0.len() - 1;
    }
    n + params
        .gating
        .weights
        .iter()
        .skip(1)
        .map(Vec::len)
        .sum::<usize>()
}

#[test]
fn parameter_count_matches_a_tally_of_a_trained_model() {
    let cohort = small_cohort(&recovery_truth(), 80, 6);
    let config = EmConfig {
        max_iter: 2,
        rank: 2,
        ..EmConfig::default()
    };
    let (params, _) = em_fit(&cohort, 2, 2, &config).unwrap();
    let f = params.gating.weights[0].len();
    assert_eq!(params.parameter_count(), tally(&params));
    assert_eq!(count_parameters(2, 2, 3, f, 2), tally(&params));
}

#[test]
fn em_is_deterministic_for_a_seed() {
    let cohort = small_cohort(&recovery_truth(), 60, 7);
    let config = EmConfig {
        max_iter: 3,
        rank: 1,
        seed: 9,
        ..EmConfig::default()
    };
    let (a, ra) = em_fit(&cohort, 2, 2, &config).unwrap();
    let (b, rb) = em_fit(&cohort, 2, 2, &config).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(ra.trace, rb.trace);
}

#[test]
fn fitted_likelihood_is_not_worse_than_the_truth() {
    let truth = recovery_truth();
    let cohort = small_cohort(&truth, 300, 8);
    let config = EmConfig {
        rank: truth.rank,
        ..EmConfig::default()
    };
    let (fit, _) = em_fit(&cohort, 2, 3, &config).unwrap();
    // Both models compared in raw units: undo each model's standardization.
    let raw = |p: &ModelParams| {
        let jac: f64 = cohort
            .patients
            .iter()
            .flat_map(|r| &r.events)
            .map(|e| p.standardizer.sd[e.stream].ln())
            .sum();
        cohort_log_likelihood(p, &cohort).unwrap() - jac
    };
    let mut reference = truth.clone();
    reference.prior_icu = cohort.count_outcome(Outcome::Icu) as f64 / cohort.len() as f64;
    let (got, want) = (raw(&fit), raw(&reference));
    assert!(
        got >= want - 0.005 * want.abs(),
        "fitted {got} vs generating {want}"
    );
}

#[test]
fn single_gaussian_mean_is_recovered() {
    let truth = TruthDesign {
        phenotypes: 1,
        epochs: 1,
        streams: 1,
        rank: 1,
        t_max: 200,
        prior_icu: 0.3,
    }
    .build(
        |v, _, _| EpochKernelParams {
            mean: vec![if v == 0 { -0.4 } else { 0.7 }],
            rank: 1,
            factor: vec![0.0],
            diag: vec![1e-4],
            length_scale: 2.0,
            noise: vec![0.5],
        },
        |_, _, _| NegBinomial::with_mean(20.0, 4.0),
        |_, _| vec![1.0],
        |_, _| 0.0,
    );
    let cohort = small_cohort(&truth, 400, 9);
    let config = EmConfig {
        rank: 1,
        t_max: 200,
        ..EmConfig::default()
    };
    let (fit, _) = em_fit(&cohort, 1, 1, &config).unwrap();
    for outcome in [Outcome::Discharged, Outcome::Icu] {
        let n = cohort
            .patients
            .iter()
            .filter(|p| p.outcome == outcome)
            .map(|p| p.events.len())
            .sum::<usize>() as f64;
        let sd = truth.standardizer.sd[0];
        let se = sd * (truth.trajectory(outcome, 0).epochs[0].marginal_var(0) / n).sqrt();
        let want = truth
            .standardizer
            .invert(0, truth.trajectory(outcome, 0).epochs[0].mean[0]);
        let got = fit
            .standardizer
            .invert(0, fit.trajectory(outcome, 0).epochs[0].mean[0]);
        assert!(
            (got - want).abs() <= 3.0 * se,
            "{outcome:?}: {got} vs {want} (se {se})"
        );
    }
}

#[test]
fn gate_stays_on_the_simplex_for_extreme_logits() {
    let truth = recovery_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f = truth.gating.weights[0].len();
    for _ in 0..100 {
        let y: Vec<f64> = (0..f).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let g = gating_probabilities(&y, &truth.gating);
        assert!(g.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
