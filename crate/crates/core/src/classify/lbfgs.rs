use std::collections::VecDeque;
use std::fmt;

use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Gradient infinity-norm fell below the tolerance.
    Converged,
    MaxIterations,
    /// Backtracking could not find a decreasing step.
    LineSearchStalled,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::MaxIterations => "max_iter",
            StopReason::LineSearchStalled => "stalled",
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Limited-memory BFGS with Armijo backtracking. Deterministic: no
/// randomness, fixed evaluation order.
pub(crate) fn minimize(
    mut objective: impl FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    x0: DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> Minimum {
    let mut x = x0;
    let (mut f, mut g) = objective(&x);
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(MEMORY);

    for iter in 0..max_iter {
        if g.amax() < tol {
            return Minimum { x, value: f, iterations: iter, stop: StopReason::Converged };
        }

        // Two-loop recursion for d = -H g.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            q *= s.dot(y) / y.dot(y);
        } else {
            q /= g.norm().max(1.0);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        let mut direction = -q;
        let mut slope = g.dot(&direction);
        if slope >= 0.0 {
            history.clear();
            direction = -&g / g.norm().max(1.0);
            slope = g.dot(&direction);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate = &x + &direction * step;
            let (fc, gc) = objective(&candidate);
            if fc.is_finite() && fc <= f + ARMIJO * step * slope {
                accepted = Some((candidate, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return Minimum { x, value: f, iterations: iter, stop: StopReason::LineSearchStalled };
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    let stop = if g.amax() < tol { StopReason::Converged } else { StopReason::MaxIterations };
    Minimum { x, value: f, iterations: max_iter, stop }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        // f(x) = sum_i (i+1) (x_i - i)^2
        let obj = |x: &DVector<f64>| {
            let mut f = 0.0;
            let g = DVector::from_fn(x.len(), |i, _| {
                let w = (i + 1) as f64;
                f += w * (x[i] - i as f64).powi(2);
                2.0 * w * (x[i] - i as f64)
            });
            (f, g)
        };
        let m = minimize(obj, DVector::zeros(6), 200, 1e-10);
        assert_eq!(m.stop, StopReason::Converged);
        for i in 0..6 {
            assert!((m.x[i] - i as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn rosenbrock() {
        let obj = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            (f, g)
        };
        let m = minimize(obj, DVector::from_vec(vec![-1.2, 1.0]), 1000, 1e-8);
        assert_eq!(m.stop, StopReason::Converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn max_iter_reported() {
        let obj = |x: &DVector<f64>| (x.norm_squared(), x * 2.0);
        let m = minimize(obj, DVector::from_element(3, 5.0), 0, 1e-12);
        assert_eq!(m.stop, StopReason::MaxIterations);
        assert_eq!(m.iterations, 0);
    }
}
