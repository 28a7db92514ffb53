//! Limited-memory quasi-Newton minimizer (two-loop recursion, backtracking
//! line search with the sufficient-decrease condition) and a fixed-step
//! gradient-descent fallback. Both track and return the best iterate seen.

use std::collections::VecDeque;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: u32 = 40;
const CURVATURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct OptOutcome {
    pub x: Vec<f64>,
    pub value: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient.
pub(crate) fn minimize<F>(
    f: F,
    x0: Vec<f64>,
    max_iters: usize,
    grad_tol: f64,
    memory: usize,
) -> OptOutcome
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return OptOutcome { x, value: fx };
    }
    let mut best = OptOutcome { x: x.clone(), value: fx };
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    for iter in 0..max_iters {
        if norm_inf(&g) <= grad_tol {
            break;
        }

        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - beta) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = if iter == 0 { 1.0 / norm_inf(&g).max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xt: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (ft, gt) = f(&xt);
            if ft.is_finite() && ft <= fx + ARMIJO_C1 * step * slope {
                accepted = Some((xt, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xt, ft, gt)) = accepted else {
            break;
        };

        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > CURVATURE_TOL {
            if history.len() == memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = xt;
        fx = ft;
        g = gt;
        if !g.iter().all(|v| v.is_finite()) {
            break;
        }
        if fx < best.value {
            best = OptOutcome { x: x.clone(), value: fx };
        }
    }
    best
}

/// Fixed-step steepest descent; the fallback optimizer.
pub(crate) fn fixed_step_descent<F>(
    f: F,
    x0: Vec<f64>,
    max_iters: usize,
    grad_tol: f64,
    step: f64,
) -> OptOutcome
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return OptOutcome { x, value: fx };
    }
    let mut best = OptOutcome { x: x.clone(), value: fx };
    for _ in 0..max_iters {
        if norm_inf(&g) <= grad_tol || g.iter().any(|v| !v.is_finite()) {
            break;
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= step * gi;
        }
        let (ft, gt) = f(&x);
        if !ft.is_finite() {
            break;
        }
        fx = ft;
        g = gt;
        if fx < best.value {
            best = OptOutcome { x: x.clone(), value: fx };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> (f64, Vec<f64>) {
        // f = sum (x_i - i)^2 with a mild cross term.
        let n = x.len();
        let mut v = 0.0;
        let mut g = vec![0.0; n];
        for i in 0..n {
            let d = x[i] - i as f64;
            v += d * d;
            g[i] = 2.0 * d;
        }
        let cross = x[0] * x[n - 1];
        v += 0.1 * cross * cross;
        g[0] += 0.2 * cross * x[n - 1];
        g[n - 1] += 0.2 * cross * x[0];
        (v, g)
    }

    #[test]
    fn minimizes_smooth_quadratic() {
        let out = minimize(quadratic, vec![5.0; 4], 200, 1e-10, 10);
        let (v0, _) = quadratic(&[5.0; 4]);
        assert!(out.value < v0 * 1e-8, "value {}", out.value);
    }

    #[test]
    fn rosenbrock_descends_substantially() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (v, g)
        };
        let out = minimize(f, vec![-1.2, 1.0], 500, 1e-8, 10);
        assert!(out.value < 1e-6, "value {}", out.value);
    }

    #[test]
    fn fixed_step_makes_progress() {
        let out = fixed_step_descent(quadratic, vec![5.0; 4], 500, 1e-10, 0.1);
        let (v0, _) = quadratic(&[5.0; 4]);
        assert!(out.value < v0 * 0.01);
    }

    #[test]
    fn non_finite_start_returns_immediately() {
        let f = |_: &[f64]| (f64::NAN, vec![0.0]);
        let out = minimize(f, vec![1.0], 50, 1e-8, 10);
        assert!(out.value.is_nan());
    }
}
