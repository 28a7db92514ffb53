//! Spectral-relaxation initializer: dropping the sign nonlinearity turns the
//! subproblem into maximizing v' M v with
//! M = sum gamma_(a,o) (x_a - x_o)(x_a - x_o)', so the leading eigenvector of
//! M is a strong starting hyperplane. M is only touched through matvecs, so
//! the matrix is never formed; a trace-bound shift makes plain power
//! iteration converge to the most-positive eigenvalue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::DataMatrix;
use crate::exec;
use crate::model::Hyperplane;

use super::PairGraph;

const RESIDUAL_TOL: f64 = 1e-6;
const MAX_POWER_ITERS: usize = 5000;
const PAIR_CHUNK: usize = 512;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn matvec(graph: &PairGraph, data: &DataMatrix, v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let n_chunks = graph.pairs.len().div_ceil(PAIR_CHUNK);
    let partials: Vec<Vec<f64>> = exec::map_indices(n_chunks, |ci| {
        let lo = ci * PAIR_CHUNK;
        let hi = (lo + PAIR_CHUNK).min(graph.pairs.len());
        let mut acc = vec![0.0; d];
        for &(a, o, gamma) in &graph.pairs[lo..hi] {
            let xa = data.row(graph.points[a as usize]);
            let xo = data.row(graph.points[o as usize]);
            let mut proj = 0.0;
            for k in 0..d {
                proj += (xa[k] - xo[k]) * v[k];
            }
            let scale = gamma * proj;
            for k in 0..d {
                acc[k] += scale * (xa[k] - xo[k]);
            }
        }
        acc
    });
    let mut out = vec![0.0; d];
    for p in &partials {
        for (o, x) in out.iter_mut().zip(p) {
            *o += x;
        }
    }
    out
}

/// -median(v.x) over all rows, so the plane splits the data evenly.
pub(crate) fn median_offset(v: &[f64], data: &DataMatrix) -> f64 {
    let mut proj: Vec<f64> = (0..data.rows())
        .map(|i| v.iter().zip(data.row(i)).map(|(a, x)| a * x).sum())
        .collect();
    proj.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = proj.len();
    let median = if n % 2 == 1 { proj[n / 2] } else { 0.5 * (proj[n / 2 - 1] + proj[n / 2]) };
    -median
}

pub(crate) fn random_unit_plane(dims: usize, rng: &mut ChaCha8Rng) -> Hyperplane {
    loop {
        let v: Vec<f64> = (0..dims).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return Hyperplane::new(v.iter().map(|x| x / n).collect(), 0.0);
        }
    }
}

/// Leading-eigenvector hyperplane with offset at the projection median.
/// Returns `(plane, true)` from the random-plane fallback when the pair
/// matrix is numerically zero or power iteration fails to converge.
pub(crate) fn spectral_plane(
    graph: &PairGraph,
    data: &DataMatrix,
    fallback_seed: u64,
) -> (Hyperplane, bool) {
    let d = data.dims();
    let mut fallback_rng = ChaCha8Rng::seed_from_u64(fallback_seed);

    // Trace-norm bound: |lambda| <= sum |gamma| ||x_a - x_o||^2; also the
    // shift that makes M + cI positive semidefinite.
    let c: f64 = graph
        .pairs
        .iter()
        .map(|&(a, o, gamma)| {
            let xa = data.row(graph.points[a as usize]);
            let xo = data.row(graph.points[o as usize]);
            let d2: f64 = xa.iter().zip(xo).map(|(p, q)| (p - q) * (p - q)).sum();
            gamma.abs() * d2
        })
        .sum();
    if !(c > 1e-30) {
        return (random_unit_plane(d, &mut fallback_rng), true);
    }

    // Probe for an exactly cancelling matrix (M = 0 with nonzero weights).
    let mut probe_rng = ChaCha8Rng::seed_from_u64(0x7072_6f62);
    let zero_matrix = (0..3).all(|_| {
        let r: Vec<f64> = (0..d).map(|_| probe_rng.sample::<f64, _>(StandardNormal)).collect();
        let rn = norm(&r);
        norm(&matvec(graph, data, &r)) <= 1e-12 * c * rn.max(1e-12)
    });
    if zero_matrix {
        return (random_unit_plane(d, &mut fallback_rng), true);
    }

    // Phase 1: spectral-radius estimate by iterating M^2 (positive
    // semidefinite, so the sign of the extreme eigenvalue cannot stall it).
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut rho = 0.0;
    for _ in 0..200 {
        let mv = matvec(graph, data, &v);
        let n1 = norm(&mv);
        if n1 <= 1e-14 * c {
            return (random_unit_plane(d, &mut fallback_rng), true);
        }
        let mmv = matvec(graph, data, &mv);
        let n2 = norm(&mmv);
        let next_rho = n2 / n1;
        let settled = (next_rho - rho).abs() <= 1e-3 * next_rho.max(1e-12);
        rho = next_rho;
        if n2 <= 1e-300 {
            return (random_unit_plane(d, &mut fallback_rng), true);
        }
        v = mmv.iter().map(|x| x / n2).collect();
        if settled {
            break;
        }
    }

    // Phase 2: power iteration on M + sI with a tight shift, so the
    // most-positive eigenvalue dominates at a usable rate.
    let shift = 1.05 * rho + 1e-12 * c.max(1.0);
    for _ in 0..MAX_POWER_ITERS {
        let mv = matvec(graph, data, &v);
        let lambda: f64 = v.iter().zip(&mv).map(|(a, b)| a * b).sum();
        let residual: f64 =
            mv.iter().zip(&v).map(|(m, vi)| (m - lambda * vi) * (m - lambda * vi)).sum::<f64>().sqrt();
        if residual <= RESIDUAL_TOL * lambda.abs().max(1.0) {
            // Canonical sign: largest-magnitude component positive.
            let lead = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap().then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            let b = median_offset(&v, data);
            return (Hyperplane::new(v, b), false);
        }
        let mut next: Vec<f64> = mv.iter().zip(&v).map(|(m, vi)| m + shift * vi).collect();
        let n = norm(&next);
        if n <= 1e-300 {
            return (random_unit_plane(d, &mut fallback_rng), true);
        }
        next.iter_mut().for_each(|x| *x /= n);
        v = next;
    }
    (random_unit_plane(d, &mut fallback_rng), true)
}
