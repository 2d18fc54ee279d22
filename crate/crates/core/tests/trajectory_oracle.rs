mod common;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use wardrisk::likelihood::Observation;
use wardrisk::trajectory::{
    duration_log_survival as lib_survival, segment_posteriors, segmentation_count,
    terminal_log_likelihood, trajectory_log_likelihood, Horizon,
};

#[test]
fn three_epochs_ten_hours_six_events() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let model = random_trajectory_model(&mut rng, 3, 2, 8);
        let obs = random_observations(&mut rng, 2, 6, 10.0);
        let got = trajectory_log_likelihood(&obs, 10.0, &model).unwrap();
        let want = brute_force_log_likelihood(&obs, 11, false, &model);
        assert!(relative_error(got, want) <= 1e-9, "{got} vs {want}");
    }
}

#[test]
fn enumeration_count_matches_paths() {
    for k in 1..=3 {
        for t in 0..=6 {
            let h = Horizon::Censored(t as f64);
            assert_eq!(
                segmentation_count(k, h) as usize,
                all_paths(k, h.cells(), false).len(),
                "K={k} t={t}"
            );
        }
    }
}

/// `(epoch, first cell, one past last cell)` of every piece of a path.
fn pieces(path: &Path, cells: usize) -> Vec<(usize, usize, usize)> {
    let mut edges = vec![0];
    edges.extend(&path.boundaries);
    edges.push(cells);
    edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| (path.start_epoch + i, w[0], w[1]))
        .collect()
}

fn check_posteriors(
    obs: &[Observation],
    horizon: Horizon,
    model: &wardrisk::trajectory::TrajectoryModel,
) {
    let cells = horizon.cells();
    let terminal = horizon.is_terminal();
    let post = segment_posteriors(obs, horizon, model, 0.0).unwrap();
    let paths = all_paths(model.epochs.len(), cells, terminal);
    let joints: Vec<f64> = paths
        .iter()
        .map(|p| path_log_joint(obs, cells, terminal, model, p))
        .collect();
    let ll = wardrisk::log_sum_exp(&joints);
    assert!(relative_error(post.log_likelihood, ll) <= 1e-9);

    let mut oracle: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let mut initial = vec![0.0; model.epochs.len()];
    for (p, j) in paths.iter().zip(&joints) {
        let w = (j - ll).exp();
        initial[p.start_epoch] += w;
        for piece in pieces(p, cells) {
            *oracle.entry(piece).or_default() += w;
        }
    }
    for (a, b) in post.initial.iter().zip(&initial) {
        assert!((a - b).abs() <= 1e-9, "initial {a} vs {b}");
    }
    let mut seen = 0;
    for seg in &post.segments {
        let want = oracle
            .get(&(seg.epoch, seg.start, seg.end))
            .copied()
            .unwrap_or(0.0);
        assert!((seg.weight - want).abs() <= 1e-9, "{seg:?} oracle {want}");
        assert_eq!(seg.completed, terminal || seg.end < cells);
        seen += 1;
    }
    let nonzero = oracle.values().filter(|w| **w > 1e-300).count();
    assert!(
        seen >= nonzero,
        "library listed {seen} segments, oracle has {nonzero}"
    );
}

#[test]
fn posteriors_match_normalized_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..20 {
        let model = random_trajectory_model(&mut rng, 2, 2, 6);
        let obs = random_observations(&mut rng, 2, 5, 5.0);
        let horizon = if i % 2 == 0 {
            Horizon::Censored(5.0)
        } else {
            Horizon::Terminal(5.0)
        };
        check_posteriors(&obs, horizon, &model);
    }
}

#[test]
fn posterior_weights_cover_every_cell_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = random_trajectory_model(&mut rng, 3, 2, 6);
    let obs = random_observations(&mut rng, 2, 7, 9.0);
    let post = segment_posteriors(&obs, Horizon::Terminal(9.0), &model, 0.0).unwrap();
    for c in 0..post.cells {
        let cover: f64 = post
            .segments
            .iter()
            .filter(|s| (s.start..s.end).contains(&c))
            .map(|s| s.weight)
            .sum();
        assert!((cover - 1.0).abs() < 1e-9, "cell {c}: {cover}");
    }
}

#[test]
fn one_epoch_is_gp_density_plus_survival() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let model = random_trajectory_model(&mut rng, 1, 3, 40);
    let obs = random_observations(&mut rng, 3, 12, 20.0);
    let law = &model.durations.epochs[0];
    let got = trajectory_log_likelihood(&obs, 20.0, &model).unwrap();
    let want = dense_mvn_log_density(&obs, &model.epochs[0]) + duration_log_survival(law, 40)[21];
    assert!(relative_error(got, want) <= 1e-10);
    let terminal = terminal_log_likelihood(&obs, 20.0, &model).unwrap();
    let want = dense_mvn_log_density(&obs, &model.epochs[0]) + duration_log_pmf(law, 40)[20];
    assert!(relative_error(terminal, want) <= 1e-10);
}

#[test]
fn survival_is_a_tail_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = random_trajectory_model(&mut rng, 2, 1, 30);
    for k in 0..2 {
        let oracle = duration_log_survival(&model.durations.epochs[k], 30);
        for t in 1..=30 {
            let got = lib_survival(t, k, &model.durations).unwrap();
            assert!(
                (got - oracle[t]).abs() <= 1e-12 * oracle[t].abs().max(1.0),
                "k={k} t={t}"
            );
        }
    }
}
