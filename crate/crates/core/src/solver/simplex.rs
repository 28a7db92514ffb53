//! Dense tableau simplex for LPs in the standard form
//! `max c'x  s.t.  Ax <= b, x >= 0` with `b >= 0`,
//! using Bland's anti-cycling rule, and extraction of the row multipliers
//! (the dual solution) from the final tableau. Since b >= 0 the slack basis
//! is feasible and no phase-1 is needed.
//!
//! The restricted master of the trainer is solved through its dual, which
//! lands exactly in this form; the multipliers recovered here are then the
//! master's primal variables.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct SimplexSolution {
    /// Optimal x.
    pub x: Vec<f64>,
    /// Row multipliers y >= 0 (one per constraint): the dual solution.
    pub duals: Vec<f64>,
    pub objective: f64,
}

/// Solves max c'x s.t. Ax <= b, x >= 0. `a` holds the constraint rows.
pub fn solve_standard_max(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<SimplexSolution> {
    let m = a.len();
    let n = c.len();
    debug_assert_eq!(b.len(), m);
    debug_assert!(a.iter().all(|row| row.len() == n));
    if b.iter().any(|&v| v < 0.0) {
        return Err(Error::numerical("standard-form simplex requires b >= 0"));
    }
    if m == 0 {
        // Unconstrained except x >= 0: bounded only if c <= 0.
        if c.iter().any(|&v| v > 0.0) {
            return Err(Error::numerical("unbounded LP: no constraints"));
        }
        return Ok(SimplexSolution { x: vec![0.0; n], duals: vec![], objective: 0.0 });
    }

    // Tableau: columns 0..n are structural, n..n+m slacks, last column RHS.
    // Row `m` is the objective row holding z_j - c_j.
    let width = n + m + 1;
    let mut t = vec![0.0; (m + 1) * width];
    for (i, row) in a.iter().enumerate() {
        t[i * width..i * width + n].copy_from_slice(row);
        t[i * width + n + i] = 1.0;
        t[i * width + n + m] = b[i];
    }
    for (j, &cj) in c.iter().enumerate() {
        t[m * width + j] = -cj;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let max_pivots = 50 * (m + n + 1).max(100);
    for _ in 0..max_pivots {
        // Bland: entering = lowest-index column with negative objective row.
        let Some(enter) = (0..n + m).find(|&j| t[m * width + j] < -PIVOT_TOL) else {
            return Ok(extract(&t, &basis, m, n, width));
        };
        // Min-ratio leaving row; ties by lowest basis variable index.
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let aij = t[i * width + enter];
            if aij > PIVOT_TOL {
                let ratio = t[i * width + n + m] / aij;
                let replace = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - PIVOT_TOL
                            || (ratio < lr + PIVOT_TOL && basis[i] < basis[li])
                    }
                };
                if replace {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((li, _)) = leave else {
            return Err(Error::numerical(format!(
                "unbounded LP: column {enter} has no positive entries"
            )));
        };
        pivot(&mut t, m, width, li, enter);
        basis[li] = enter;
    }
    Err(Error::numerical(format!("simplex exceeded {max_pivots} pivots")))
}

fn pivot(t: &mut [f64], m: usize, width: usize, row: usize, col: usize) {
    let piv = t[row * width + col];
    for j in 0..width {
        t[row * width + j] /= piv;
    }
    for i in 0..=m {
        if i == row {
            continue;
        }
        let factor = t[i * width + col];
        if factor != 0.0 {
            for j in 0..width {
                t[i * width + j] -= factor * t[row * width + j];
            }
            t[i * width + col] = 0.0;
        }
    }
}

fn extract(t: &[f64], basis: &[usize], m: usize, n: usize, width: usize) -> SimplexSolution {
    let mut x = vec![0.0; n];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = t[i * width + n + m];
        }
    }
    // Dual value of constraint i is the objective-row entry of its slack.
    let duals: Vec<f64> = (0..m).map(|i| t[m * width + n + i].max(0.0)).collect();
    let objective = t[m * width + n + m];
    SimplexSolution { x, duals, objective }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_variable_lp() {
        // max y s.t. 2y <= 1, y <= 10.
        let sol = solve_standard_max(&[vec![2.0], vec![1.0]], &[1.0, 10.0], &[1.0]).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-12);
        assert!((sol.objective - 0.5).abs() < 1e-12);
        // Multiplier of the binding first row recovers the primal w = 1/2.
        assert!((sol.duals[0] - 0.5).abs() < 1e-12);
        assert_eq!(sol.duals[1], 0.0);
    }

    #[test]
    fn degenerate_lp_terminates() {
        // Degenerate vertex at the origin-adjacent corner.
        let a = vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let sol = solve_standard_max(&a, &[1.0, 1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-10);
    }

    #[test]
    fn detects_unbounded() {
        assert!(solve_standard_max(&[vec![-1.0]], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn strong_duality_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..50 {
            let m = rng.random_range(1..8usize);
            let n = rng.random_range(1..8usize);
            let a: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..2.0)).collect())
                .collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
            // Keep the LP bounded: any positive-cost column must appear in
            // some row with a positive coefficient; easiest is an extra
            // box row x_j <= 10 for all j.
            let mut a = a;
            for j in 0..n {
                let mut row = vec![0.0; n];
                row[j] = 1.0;
                a.push(row);
            }
            let mut b = b;
            b.extend(std::iter::repeat_n(10.0, n));
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sol = solve_standard_max(&a, &b, &c).unwrap();
            // Primal feasibility.
            for (row, &bi) in a.iter().zip(&b) {
                let lhs: f64 = row.iter().zip(&sol.x).map(|(r, x)| r * x).sum();
                assert!(lhs <= bi + 1e-8);
            }
            // Dual feasibility: A'y >= c.
            for j in 0..n {
                let lhs: f64 = a.iter().zip(&sol.duals).map(|(row, y)| row[j] * y).sum();
                assert!(lhs >= c[j] - 1e-8);
            }
            // Strong duality: b'y == c'x.
            let dual_obj: f64 = b.iter().zip(&sol.duals).map(|(bi, y)| bi * y).sum();
            assert!((dual_obj - sol.objective).abs() < 1e-8);
        }
    }
}
