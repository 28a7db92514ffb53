//! Exhaustive decision-stump initializer: the best single-dimension
//! threshold, with candidate thresholds at the midpoints between consecutive
//! distinct values. An incremental sweep flips one value-group at a time and
//! patches the objective through the pair adjacency, so each dimension costs
//! O(points log points + pairs).

use crate::data::DataMatrix;
use crate::model::Hyperplane;

use super::PairGraph;

/// Best stump over all dimensions, with its binary objective value.
/// Ties resolve to the lowest dimension, then the lowest threshold.
pub(crate) fn best_stump(graph: &PairGraph, data: &DataMatrix) -> Option<(Hyperplane, f64)> {
    if graph.pairs.is_empty() {
        return None;
    }
    let n_points = graph.points.len();
    let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_points];
    for &(a, o, gamma) in &graph.pairs {
        adjacency[a as usize].push((o, gamma));
        adjacency[o as usize].push((a, gamma));
    }

    let mut best: Option<(usize, f64, f64)> = None; // (dim, threshold, value)
    let mut side = vec![true; n_points];
    for dim in 0..data.dims() {
        let mut order: Vec<usize> = (0..n_points).collect();
        order.sort_by(|&a, &b| {
            data.row(graph.points[a])[dim]
                .partial_cmp(&data.row(graph.points[b])[dim])
                .unwrap()
                .then(a.cmp(&b))
        });

        // All points start on the positive side (value 0); sweep the
        // threshold upward, moving equal-valued groups together.
        side.fill(true);
        let mut value = 0.0;
        let mut g = 0;
        while g < n_points {
            let group_val = data.row(graph.points[order[g]])[dim];
            let mut h = g;
            while h < n_points && data.row(graph.points[order[h]])[dim] == group_val {
                let p = order[h];
                side[p] = false;
                for &(u, gamma) in &adjacency[p] {
                    // The (p, u) term flips between 0 and gamma.
                    let diff_now = side[p] != side[u as usize];
                    value += if diff_now { gamma } else { -gamma };
                }
                h += 1;
            }
            if h < n_points {
                let next_val = data.row(graph.points[order[h]])[dim];
                let threshold = 0.5 * (group_val + next_val);
                let replace = match best {
                    None => true,
                    Some((_, _, bv)) => value > bv,
                };
                if replace {
                    best = Some((dim, threshold, value));
                }
            }
            g = h;
        }
    }

    best.map(|(dim, threshold, value)| {
        let mut v = vec![0.0; data.dims()];
        v[dim] = 1.0;
        (Hyperplane::new(v, -threshold), value)
    })
}
