//! Sigmoid-smoothed surrogate of the binary subproblem objective, with its
//! exact analytic gradient.
//!
//! The binary objective sums gamma * |h(x_a) - h(x_o)| over weighted point
//! pairs. The surrogate replaces the hard bit with h(x) = sigmoid(alpha
//! (v.x + b)) and |u| with sqrt(u^2 + eps^2) - eps, which is exact at 0 and
//! smooth everywhere.

use crate::data::DataMatrix;
use crate::exec;

use super::PairGraph;

/// Clamp for the sigmoid argument; exp overflows near 709.
const SIGMOID_CLAMP: f64 = 500.0;

fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    1.0 / (1.0 + (-z).exp())
}

/// Surrogate value and its gradient with respect to (v, b); the returned
/// gradient has v's components first and the offset derivative last.
pub(crate) fn surrogate_value_and_grad(
    graph: &PairGraph,
    data: &DataMatrix,
    v: &[f64],
    b: f64,
    alpha: f64,
    eps: f64,
) -> (f64, Vec<f64>) {
    let d = data.dims();
    debug_assert_eq!(v.len(), d);

    // Activation and sigmoid slope per involved point.
    let acts: Vec<(f64, f64)> = exec::map_slice(&graph.points, |&row| {
        let z: f64 = v.iter().zip(data.row(row)).map(|(a, x)| a * x).sum();
        let h = sigmoid(alpha * (z + b));
        (h, h * (1.0 - h))
    });

    // Pair scan: value plus the per-point derivative d value / d h_p.
    let mut value = 0.0;
    let mut dh = vec![0.0; graph.points.len()];
    for &(a, o, gamma) in &graph.pairs {
        let t = acts[a as usize].0 - acts[o as usize].0;
        let root = (t * t + eps * eps).sqrt();
        value += gamma * (root - eps);
        let slope = gamma * t / root;
        dh[a as usize] += slope;
        dh[o as usize] -= slope;
    }

    // Chain through the sigmoid into (v, b), in fixed-size chunks so the
    // reduction order is independent of the thread count.
    const CHUNK: usize = 256;
    let n_chunks = graph.points.len().div_ceil(CHUNK);
    let partials: Vec<(Vec<f64>, f64)> = exec::map_indices(n_chunks, |ci| {
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(graph.points.len());
        let mut gv = vec![0.0; d];
        let mut gb = 0.0;
        for p in lo..hi {
            let coef = dh[p] * acts[p].1 * alpha;
            if coef == 0.0 {
                continue;
            }
            for (g, x) in gv.iter_mut().zip(data.row(graph.points[p])) {
                *g += coef * x;
            }
            gb += coef;
        }
        (gv, gb)
    });
    let mut grad = vec![0.0; d + 1];
    for (gv, gb) in &partials {
        for (g, p) in grad.iter_mut().zip(gv) {
            *g += p;
        }
        grad[d] += gb;
    }
    (value, grad)
}
