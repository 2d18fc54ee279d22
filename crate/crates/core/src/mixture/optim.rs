use std::collections::VecDeque;

use crate::linalg::{cholesky_in_place, solve_lower, solve_lower_transpose};

/// Box constraint on one coordinate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Bound {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

fn project(x: &mut [f64], bounds: &[Bound]) {
    for b in bounds {
        x[b.index] = x[b.index].clamp(b.lower, b.upper);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `f` from `x0` with limited-memory BFGS (history 5), projecting
/// onto `bounds` after each step and backtracking until the Armijo condition
/// holds. `f` returns `None` where the objective is undefined. Returns the
/// best point found and its value; the value never falls below `f(x0)`.
pub(crate) fn maximize<F>(
    mut f: F,
    x0: Vec<f64>,
    bounds: &[Bound],
    iterations: usize,
) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    const HISTORY: usize = 5;
    const ARMIJO: f64 = 1e-4;
    let mut x = x0;
    project(&mut x, bounds);
    let Some((mut fx, mut g)) = f(&x) else {
        return (x, f64::NEG_INFINITY);
    };
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    for _ in 0..iterations {
        // Two-loop recursion on the minimization problem -f.
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let scale = match memory.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / dot(&g, &g).sqrt().max(1.0),
        };
        for qi in q.iter_mut() {
            *qi *= scale;
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut direction: Vec<f64> = q.iter().map(|v| -v).collect();
        if !(dot(&direction, &g) > 0.0) || direction.iter().any(|v| !v.is_finite()) {
            memory.clear();
            let norm = dot(&g, &g).sqrt().max(1.0);
            direction = g.iter().map(|v| v / norm).collect();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut trial: Vec<f64> = x
                .iter()
                .zip(&direction)
                .map(|(a, d)| a + step * d)
                .collect();
            project(&mut trial, bounds);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let predicted = dot(&g, &moved);
            if predicted <= 0.0 && moved.iter().all(|m| *m == 0.0) {
                break;
            }
            if let Some((ft, gt)) = f(&trial) {
                if ft.is_finite() && ft >= fx + ARMIJO * predicted.max(0.0) && ft >= fx {
                    accepted = Some((trial, ft, gt, moved));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            break;
        };
        let y: Vec<f64> = g.iter().zip(&gn).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if memory.len() == HISTORY {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let gain = fn_ - fx;
        x = xn;
        fx = fn_;
        g = gn;
        if gain <= 1e-12 * fx.abs().max(1.0) {
            break;
        }
    }
    (x, fx)
}

/// Central-difference gradient.
pub(crate) fn numeric_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Solves `(A + damping * I) x = b` for symmetric positive semi-definite `A`,
/// raising the damping until the factorization succeeds.
pub(crate) fn solve_damped(a: &[f64], b: &[f64], n: usize, damping: f64) -> Option<Vec<f64>> {
    let scale = (0..n)
        .map(|i| a[i * n + i].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut lambda = damping * scale;
    for _ in 0..12 {
        let mut l = a.to_vec();
        for i in 0..n {
            l[i * n + i] += lambda;
        }
        if cholesky_in_place(&mut l, n).is_ok() {
            let mut x = b.to_vec();
            solve_lower(&l, n, &mut x);
            solve_lower_transpose(&l, n, &mut x);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        lambda = (lambda * 10.0).max(1e-12);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizes_a_quadratic() {
        let target = [1.0, -2.0, 0.5];
        let f = |x: &[f64]| {
            let v = -x
                .iter()
                .zip(&target)
                .map(|(a, t)| (a - t) * (a - t) * 3.0)
                .sum::<f64>();
            let g = x.iter().zip(&target).map(|(a, t)| -6.0 * (a - t)).collect();
            Some((v, g))
        };
        let (x, v) = maximize(f, vec![0.0; 3], &[], 50);
        assert!(v > -1e-10);
        for (a, t) in x.iter().zip(&target) {
            assert!((a - t).abs() < 1e-5);
        }
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| Some((x[0], vec![1.0]));
        let (x, _) = maximize(
            f,
            vec![0.0],
            &[Bound {
                index: 0,
                lower: -1.0,
                upper: 2.0,
            }],
            20,
        );
        assert_eq!(x[0], 2.0);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
            let g = vec![
                2.0 * (1.0 - a) + 400.0 * a * (b - a * a),
                -200.0 * (b - a * a),
            ];
            Some((v, g))
        };
        let (x, _) = maximize(f, vec![-1.2, 1.0], &[], 500);
        assert!(
            (x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4,
            "{x:?}"
        );
    }

    #[test]
    fn damped_solve_handles_singular_systems() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let x = solve_damped(&a, &[2.0, 2.0], 2, 1e-8).unwrap();
        assert!((x[0] + x[1] - 2.0).abs() < 1e-6);
    }
}
