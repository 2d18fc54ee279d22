use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::em::Stay;
use crate::cohort::Outcome;
use crate::kernel::{EpochKernelParams, LengthScaleBounds, NOISE_FLOOR};
use crate::trajectory::{DurationParams, InitialEpochDist, NegBinomial, TrajectoryModel};

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm from a k-means++ start. Returns assignments and inertia.
fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let dim = points[0].len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[next].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, centers.last().unwrap()));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..200 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| {
                    squared_distance(p, &centers[a]).total_cmp(&squared_distance(p, &centers[b]))
                })
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (ctr, s) in centers[c].iter_mut().zip(&sums[c]) {
                    *ctr = s / counts[c] as f64;
                }
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&assign)
        .map(|(p, &a)| squared_distance(p, &centers[a]))
        .sum();
    (assign, inertia)
}

/// Best of `restarts` k-means runs.
pub(crate) fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    if k <= 1 || points.len() <= k {
        return (0..points.len()).map(|i| i % k.max(1)).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let (assign, inertia) = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((assign, inertia));
        }
    }
    best.unwrap().0
}

/// Per-stream mean of each stay, centered within the stay's outcome class.
/// Streams a stay never measured sit at the class center.
fn class_centered_means(stays: &[Stay], streams: usize) -> Vec<Vec<f64>> {
    let mut means = vec![vec![f64::NAN; streams]; stays.len()];
    for (m, s) in means.iter_mut().zip(stays) {
        let mut sum = vec![0.0; streams];
        let mut count = vec![0usize; streams];
        for o in &s.obs {
            sum[o.stream] += o.value;
            count[o.stream] += 1;
        }
        for u in 0..streams {
            if count[u] > 0 {
                m[u] = sum[u] / count[u] as f64;
            }
        }
    }
    for class in [Outcome::Discharged, Outcome::Icu] {
        for u in 0..streams {
            let (mut sum, mut count) = (0.0, 0usize);
            for (m, s) in means.iter().zip(stays) {
                if s.outcome == class && m[u].is_finite() {
                    sum += m[u];
                    count += 1;
                }
            }
            let center = if count > 0 { sum / count as f64 } else { 0.0 };
            for (m, s) in means.iter_mut().zip(stays) {
                if s.outcome == class {
                    m[u] = if m[u].is_finite() { m[u] - center } else { 0.0 };
                }
            }
        }
    }
    means
}

/// Z-scores every column and scales the block so its total variance is one.
/// Constant columns are dropped.
fn balanced_block(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let width = rows.first().map_or(0, Vec::len);
    let mut keep = Vec::new();
    for j in 0..width {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        if var > 1e-12 {
            keep.push((j, mean, var.sqrt()));
        }
    }
    let scale = 1.0 / (keep.len().max(1) as f64).sqrt();
    rows.iter()
        .map(|r| {
            keep.iter()
                .map(|&(j, m, sd)| scale * (r[j] - m) / sd)
                .collect()
        })
        .collect()
}

/// Views of the stays to cluster: static encoding and per-stream means
/// with equal weight, per-stream means alone, and the static encoding
/// alone.
fn clustering_views(stays: &[Stay], streams: usize) -> Vec<Vec<Vec<f64>>> {
    let statics: Vec<Vec<f64>> = stays.iter().map(|s| s.features[1..].to_vec()).collect();
    let statics = balanced_block(&statics);
    let dynamics = balanced_block(&class_centered_means(stays, streams));
    let both = statics
        .iter()
        .zip(&dynamics)
        .map(|(a, b)| a.iter().chain(b).copied().collect())
        .collect();
    vec![both, dynamics, statics]
}

/// Candidate near-hard phenotype responsibilities, one per clustering view
/// (duplicates removed). With one phenotype there is a single candidate.
pub(crate) fn initial_responsibilities(
    stays: &[Stay],
    phenotypes: usize,
    streams: usize,
    restarts: usize,
    seed: u64,
) -> Vec<Vec<Vec<f64>>> {
    if phenotypes == 1 {
        return vec![vec![vec![1.0]; stays.len()]];
    }
    let off = 0.02 / (phenotypes - 1) as f64;
    let mut seen: Vec<Vec<usize>> = Vec::new();
    let mut out = Vec::new();
    for points in clustering_views(stays, streams) {
        if points.first().is_none_or(Vec::is_empty) {
            continue;
        }
        let assign = kmeans(&points, phenotypes, restarts, seed);
        if seen.contains(&assign) {
            continue;
        }
        out.push(
            assign
                .iter()
                .map(|&a| {
                    let mut r = vec![off; phenotypes];
                    r[a] = 0.98;
                    r
                })
                .collect(),
        );
        seen.push(assign);
    }
    if out.is_empty() {
        out.push(vec![vec![1.0 / phenotypes as f64; phenotypes]; stays.len()]);
    }
    out
}

pub(crate) struct InitSettings {
    pub epochs: usize,
    pub streams: usize,
    pub rank: usize,
    pub t_max: usize,
    pub length_scale: f64,
    pub bounds: LengthScaleBounds,
}

/// Starting trajectory model from weighted stays of one class. Epoch `K`
/// takes observations in the last `L / K` hours before the endpoint, epoch
/// `K - 1` the window before that, and so on, with `L` the weighted mean
/// stay; epoch 1 absorbs everything earlier.
pub(crate) fn initial_trajectory(
    stays: &[&Stay],
    weights: &[f64],
    settings: &InitSettings,
    rng: &mut ChaCha8Rng,
) -> TrajectoryModel {
    let k = settings.epochs;
    let d = settings.streams;
    let total_w: f64 = weights.iter().sum();
    let mean_stay = if total_w > 0.0 {
        stays
            .iter()
            .zip(weights)
            .map(|(s, w)| w * s.endpoint)
            .sum::<f64>()
            / total_w
    } else {
        k as f64
    };
    let span = (mean_stay / k as f64).max(1.0);

    let mut sum = vec![vec![0.0; d]; k];
    let mut sq = vec![vec![0.0; d]; k];
    let mut wsum = vec![vec![0.0; d]; k];
    for (s, &w) in stays.iter().zip(weights) {
        for o in &s.obs {
            let back = ((s.endpoint - o.time).max(0.0) / span).floor() as usize;
            let epoch = k - 1 - back.min(k - 1);
            sum[epoch][o.stream] += w * o.value;
            sq[epoch][o.stream] += w * o.value * o.value;
            wsum[epoch][o.stream] += w;
        }
    }
    let pooled = |u: usize| -> (f64, f64) {
        let (s, q, w) = (0..k).fold((0.0, 0.0, 0.0), |(a, b, c), e| {
            (a + sum[e][u], b + sq[e][u], c + wsum[e][u])
        });
        if w > 0.0 {
            let m = s / w;
            (m, (q / w - m * m).max(0.05))
        } else {
            (0.0, 1.0)
        }
    };

    let rank = settings.rank;
    let epochs = (0..k)
        .map(|e| {
            let mut mean = vec![0.0; d];
            let mut var = vec![1.0; d];
            for u in 0..d {
                let (pm, pv) = pooled(u);
                if wsum[e][u] > 1.0 {
                    let m = sum[e][u] / wsum[e][u];
                    mean[u] = m;
                    var[u] = (sq[e][u] / wsum[e][u] - m * m).max(0.05);
                } else {
                    mean[u] = pm;
                    var[u] = pv;
                }
            }
            let factor: Vec<f64> = (0..d * rank)
                .map(|i| 0.1 * var[i / rank.max(1)].sqrt() * (rng.gen::<f64>() * 2.0 - 1.0))
                .collect();
            let diag = var.iter().map(|v| 0.5 * v).collect();
            let noise = var
                .iter()
                .map(|v| (0.3 * v).max(2.0 * NOISE_FLOOR))
                .collect();
            EpochKernelParams {
                mean,
                rank,
                factor,
                diag,
                length_scale: settings.bounds.clamp(settings.length_scale),
                noise,
            }
        })
        .collect();
    let law = NegBinomial::with_mean(span.min(settings.t_max as f64 * 0.5).max(1.5), 2.0);
    TrajectoryModel {
        epochs,
        durations: DurationParams {
            t_max: settings.t_max,
            epochs: vec![law; k],
        },
        initial: InitialEpochDist::uniform(k),
    }
}
