//! Column generation of hash functions: duals of the restricted master are
//! converted into per-triplet weights, and each new hyperplane maximizes the
//! weighted triplet objective through a sigmoid-smoothed surrogate, started
//! from spectral-relaxation, random-plane, and decision-stump initializers.

mod lbfgs;
mod smooth;
mod spectral;
mod stump;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::exec;
use crate::measures::MeasureSpec;
use crate::model::{encode_planes, HashModel, Hyperplane};
use crate::solver::{train_w, SolverConfig, TrainQuery, WorkingSet};

/// Weights over (anchor, relevant, irrelevant) triplets, stored densely per
/// query. Triplets never touched stay at weight zero and are skipped by
/// iteration.
#[derive(Debug, Clone)]
pub struct TripletWeightMap {
    per_query: Vec<QueryTriplets>,
}

#[derive(Debug, Clone)]
struct QueryTriplets {
    query: usize,
    relevant: Vec<u32>,
    irrelevant: Vec<u32>,
    /// Dense |relevant| x |irrelevant| weights, row-major.
    weights: Vec<f64>,
}

/// Weighted point pairs (i, u) obtained by summing triplet weights over the
/// third member: the subproblem objective is sum gamma |h(x_i) - h(x_u)|.
#[derive(Debug, Clone)]
pub(crate) struct PairGraph {
    /// Distinct data rows involved, ascending.
    pub points: Vec<usize>,
    /// (anchor point-index, other point-index, gamma); gamma is positive for
    /// irrelevant partners and negative for relevant ones.
    pub pairs: Vec<(u32, u32, f64)>,
}

impl TripletWeightMap {
    /// All-zero weights over each query's sampled triplets.
    pub fn zeros(queries: &[TrainQuery]) -> Self {
        let per_query = queries
            .iter()
            .map(|q| QueryTriplets {
                query: q.row,
                relevant: q.gt.relevant().to_vec(),
                irrelevant: q.gt.irrelevant().to_vec(),
                weights: vec![0.0; q.gt.relevant().len() * q.gt.irrelevant().len()],
            })
            .collect();
        TripletWeightMap { per_query }
    }

    pub fn add_weight(&mut self, query: usize, j: u32, k: u32, delta: f64) -> Result<()> {
        let qt = self
            .per_query
            .iter_mut()
            .find(|qt| qt.query == query)
            .ok_or_else(|| Error::data(format!("unknown query {query}")))?;
        let jr = qt
            .relevant
            .binary_search(&j)
            .map_err(|_| Error::data(format!("{j} is not a relevant neighbor of {query}")))?;
        let kc = qt
            .irrelevant
            .binary_search(&k)
            .map_err(|_| Error::data(format!("{k} is not an irrelevant neighbor of {query}")))?;
        qt.weights[jr * qt.irrelevant.len() + kc] += delta;
        Ok(())
    }

    pub fn get(&self, query: usize, j: u32, k: u32) -> f64 {
        self.per_query
            .iter()
            .find(|qt| qt.query == query)
            .and_then(|qt| {
                let jr = qt.relevant.binary_search(&j).ok()?;
                let kc = qt.irrelevant.binary_search(&k).ok()?;
                Some(qt.weights[jr * qt.irrelevant.len() + kc])
            })
            .unwrap_or(0.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.per_query.iter().map(|qt| qt.weights.iter().sum::<f64>()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_weight() == 0.0
    }

    /// Non-zero triplets as (query, relevant, irrelevant, weight).
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32, u32, f64)> + '_ {
        self.per_query.iter().flat_map(|qt| {
            let n = qt.irrelevant.len();
            qt.weights.iter().enumerate().filter(|(_, w)| **w != 0.0).map(move |(idx, w)| {
                (qt.query, qt.relevant[idx / n], qt.irrelevant[idx % n], *w)
            })
        })
    }

    pub(crate) fn pair_graph(&self) -> PairGraph {
        let mut points: Vec<usize> = Vec::new();
        for qt in &self.per_query {
            points.push(qt.query);
            points.extend(qt.relevant.iter().map(|&j| j as usize));
            points.extend(qt.irrelevant.iter().map(|&k| k as usize));
        }
        points.sort_unstable();
        points.dedup();
        let idx_of = |row: usize| points.binary_search(&row).unwrap() as u32;

        let mut pairs = Vec::new();
        for qt in &self.per_query {
            let (p, n) = (qt.relevant.len(), qt.irrelevant.len());
            let anchor = idx_of(qt.query);
            for (jr, &j) in qt.relevant.iter().enumerate() {
                let row_sum: f64 = qt.weights[jr * n..(jr + 1) * n].iter().sum();
                if row_sum != 0.0 {
                    pairs.push((anchor, idx_of(j as usize), -row_sum));
                }
            }
            for (kc, &k) in qt.irrelevant.iter().enumerate() {
                let col_sum: f64 = (0..p).map(|jr| qt.weights[jr * n + kc]).sum();
                if col_sum != 0.0 {
                    pairs.push((anchor, idx_of(k as usize), col_sum));
                }
            }
        }
        PairGraph { points, pairs }
    }
}

/// First-iteration weighting: 2/(|P||N|) on every sampled triplet, standing
/// in for the random dual initialization before any bit exists.
pub fn uniform_triplet_weights(queries: &[TrainQuery]) -> TripletWeightMap {
    let mut tw = TripletWeightMap::zeros(queries);
    for qt in &mut tw.per_query {
        let w = 2.0 / (qt.relevant.len() * qt.irrelevant.len()) as f64;
        qt.weights.fill(w);
    }
    tw
}

/// Converts working-set duals into triplet weights: every positive-dual
/// entry contributes lambda * 2/(|P||N|) to each pair its stored ranking
/// inverts, for each selected query.
pub fn triplet_weights(ws: &WorkingSet, queries: &[TrainQuery]) -> TripletWeightMap {
    let mut tw = TripletWeightMap::zeros(queries);
    for entry in &ws.entries {
        if entry.lambda <= 1e-12 {
            continue;
        }
        debug_assert_eq!(entry.c.len(), queries.len());
        for (qi, (qt, selected)) in tw.per_query.iter_mut().zip(&entry.c).enumerate() {
            if !selected {
                continue;
            }
            let ranking = &entry.rankings[qi];
            if ranking.is_empty() {
                continue;
            }
            let n = qt.irrelevant.len();
            let inc = entry.lambda * 2.0 / (qt.relevant.len() * n) as f64;
            let mut irr_seen: Vec<usize> = Vec::new();
            for &id in ranking {
                match qt.relevant.binary_search(&id) {
                    Ok(jr) => {
                        for &kc in &irr_seen {
                            qt.weights[jr * n + kc] += inc;
                        }
                    }
                    Err(_) => {
                        let kc = qt.irrelevant.binary_search(&id).expect("candidate id");
                        irr_seen.push(kc);
                    }
                }
            }
        }
    }
    tw
}

fn binary_value_with_graph(graph: &PairGraph, data: &DataMatrix, plane: &Hyperplane) -> f64 {
    let bits: Vec<bool> = exec::map_slice(&graph.points, |&row| plane.bit(data.row(row)));
    graph
        .pairs
        .iter()
        .map(|&(a, o, gamma)| if bits[a as usize] != bits[o as usize] { gamma } else { 0.0 })
        .sum()
}

/// Binary subproblem objective of one hyperplane:
/// sum over triplets of weight * (|h(x_i) - h(x_k)| - |h(x_i) - h(x_j)|).
pub fn subproblem_value(
    plane: &Hyperplane,
    tw: &TripletWeightMap,
    data: &DataMatrix,
) -> Result<f64> {
    if plane.dims() != data.dims() {
        return Err(Error::DimMismatch(format!(
            "plane has {} dims, data has {}",
            plane.dims(),
            data.dims()
        )));
    }
    Ok(binary_value_with_graph(&tw.pair_graph(), data, plane))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    QuasiNewton,
    GradientAscent,
}

#[derive(Debug, Clone)]
pub struct HashLearnConfig {
    /// Sigmoid sharpness, calibrated for standardized features.
    pub alpha: f64,
    /// Smoothing constant of the |.| surrogate.
    pub smooth_eps: f64,
    pub n_random_planes: usize,
    pub optimizer: Optimizer,
    pub max_opt_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
    /// Re-center each accepted plane's offset to the projection median.
    pub balanced_bits: bool,
}

impl Default for HashLearnConfig {
    fn default() -> Self {
        HashLearnConfig {
            alpha: 10.0,
            smooth_eps: 1e-3,
            n_random_planes: 50,
            optimizer: Optimizer::QuasiNewton,
            max_opt_iters: 200,
            grad_tol: 1e-6,
            seed: 0,
            balanced_bits: false,
        }
    }
}

impl HashLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.smooth_eps <= 0.0 {
            return Err(Error::config("alpha and the smoothing constant must be positive"));
        }
        if self.max_opt_iters == 0 {
            return Err(Error::config("optimizer needs at least one iteration"));
        }
        Ok(())
    }
}

const LBFGS_MEMORY: usize = 10;
const GRADIENT_ASCENT_STEP: f64 = 0.1;

/// Smoothed subproblem value and its exact gradient over (v, b); the last
/// gradient component is the offset derivative.
pub fn smoothed_value_and_gradient(
    v: &[f64],
    b: f64,
    tw: &TripletWeightMap,
    data: &DataMatrix,
    cfg: &HashLearnConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    if v.len() != data.dims() {
        return Err(Error::DimMismatch(format!(
            "v has {} dims, data has {}",
            v.len(),
            data.dims()
        )));
    }
    Ok(smooth::surrogate_value_and_grad(&tw.pair_graph(), data, v, b, cfg.alpha, cfg.smooth_eps))
}

/// Spectral-relaxation initializer; falls back to a seeded random plane
/// (flagged true) when the relaxed matrix is zero or iteration stalls.
pub fn spectral_init(
    tw: &TripletWeightMap,
    data: &DataMatrix,
    fallback_seed: u64,
) -> Result<(Hyperplane, bool)> {
    let graph = tw.pair_graph();
    if graph.pairs.is_empty() {
        return Err(Error::data("triplet weights are empty"));
    }
    Ok(spectral::spectral_plane(&graph, data, fallback_seed))
}

/// A learned hash function with diagnostics.
#[derive(Debug, Clone)]
pub struct LearnedPlane {
    pub plane: Hyperplane,
    /// Binary subproblem value of the returned plane.
    pub value: f64,
    pub spectral_fell_back: bool,
    /// True when every smooth optimization produced a degenerate plane and a
    /// raw initializer was returned instead.
    pub used_raw_initializer: bool,
}

/// Learns one hash function: locally optimizes the smoothed surrogate from
/// each initializer (spectral, the best random plane, the best stump) and
/// returns the candidate with the highest binary objective. Raw initializers
/// stay in the candidate pool, so the result is never worse than any of them.
pub fn learn_hash_function(
    tw: &TripletWeightMap,
    data: &DataMatrix,
    cfg: &HashLearnConfig,
) -> Result<LearnedPlane> {
    cfg.validate()?;
    let graph = tw.pair_graph();
    if graph.pairs.is_empty() {
        return Err(Error::data("triplet weights are empty"));
    }
    let d = data.dims();
    let eval_binary = |p: &Hyperplane| binary_value_with_graph(&graph, data, p);

    let (spectral_plane, spectral_fell_back) =
        spectral::spectral_plane(&graph, data, exec::derive_seed(cfg.seed, 1));

    let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(cfg.seed, 2));
    let mut best_random: Option<(Hyperplane, f64)> = None;
    for _ in 0..cfg.n_random_planes {
        let p = spectral::random_unit_plane(d, &mut rng);
        let v = eval_binary(&p);
        if best_random.as_ref().is_none_or(|(_, bv)| v > *bv) {
            best_random = Some((p, v));
        }
    }

    let best_stump = stump::best_stump(&graph, data);

    let optimize = |init: &Hyperplane| -> Hyperplane {
        let mut x0 = init.v.clone();
        x0.push(init.b);
        let objective = |x: &[f64]| {
            let (value, grad) =
                smooth::surrogate_value_and_grad(&graph, data, &x[..d], x[d], cfg.alpha, cfg.smooth_eps);
            (-value, grad.iter().map(|g| -g).collect::<Vec<f64>>())
        };
        let out = match cfg.optimizer {
            Optimizer::QuasiNewton => {
                lbfgs::minimize(objective, x0, cfg.max_opt_iters, cfg.grad_tol, LBFGS_MEMORY)
            }
            Optimizer::GradientAscent => lbfgs::fixed_step_descent(
                objective,
                x0,
                cfg.max_opt_iters,
                cfg.grad_tol,
                GRADIENT_ASCENT_STEP,
            ),
        };
        Hyperplane::new(out.x[..d].to_vec(), out.x[d])
    };

    let mut raw: Vec<Hyperplane> = vec![spectral_plane];
    if let Some((p, _)) = &best_random {
        raw.push(p.clone());
    }
    if let Some((p, _)) = &best_stump {
        raw.push(p.clone());
    }
    let optimized: Vec<Hyperplane> = raw.iter().map(|p| optimize(p)).collect();
    let all_optimized_degenerate = optimized.iter().all(|p| p.is_degenerate());

    let mut winner: Option<(Hyperplane, f64, bool)> = None;
    for (idx, cand) in optimized.iter().chain(raw.iter()).enumerate() {
        if cand.is_degenerate() {
            continue;
        }
        let v = eval_binary(cand);
        if winner.as_ref().is_none_or(|(_, bv, _)| v > *bv) {
            winner = Some((cand.clone(), v, idx >= optimized.len()));
        }
    }
    let (mut plane, mut value, winner_is_raw) =
        winner.ok_or_else(|| Error::numerical("no usable hash-function candidate"))?;

    if cfg.balanced_bits {
        plane.b = spectral::median_offset(&plane.v, data);
        value = eval_binary(&plane);
    }
    Ok(LearnedPlane {
        plane,
        value,
        spectral_fell_back,
        used_raw_initializer: all_optimized_degenerate && winner_is_raw,
    })
}

/// Everything the column-generation loop needs beyond the measure.
#[derive(Debug, Clone, Default)]
pub struct TrainConfig {
    pub learn: HashLearnConfig,
    pub solver: SolverConfig,
}

/// One cutting-plane iteration within one bit's weight solve.
#[derive(Debug, Clone, Serialize)]
pub struct BitTraceRow {
    pub bit: usize,
    pub iter: usize,
    pub violation: f64,
    pub xi: f64,
    pub objective: f64,
    pub working_set_size: usize,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub model: HashModel,
    pub trace: Vec<BitTraceRow>,
    pub warnings: Vec<String>,
    /// Every per-bit weight solve reached its violation tolerance.
    pub all_converged: bool,
}

/// Column generation: alternates learning one hash function from the current
/// triplet weights with re-solving the bit weights to convergence, warm
/// starting the working set across bits. `data` must already be in hashing
/// space (standardized / kernel-mapped).
pub fn train_structhash(
    data: &DataMatrix,
    queries: &[TrainQuery],
    spec: &MeasureSpec,
    bits: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    if bits == 0 {
        return Err(Error::config("bit count must be at least 1"));
    }
    cfg.learn.validate()?;
    cfg.solver.validate()?;
    spec.validate()?;
    if queries.is_empty() {
        return Err(Error::data("training requires at least one query"));
    }
    for q in queries {
        if !q.gt.has_both_sides() {
            return Err(Error::data(format!("query {} is missing a neighbor side", q.row)));
        }
        if q.row >= data.rows()
            || q.gt.relevant().iter().chain(q.gt.irrelevant()).any(|&id| id as usize >= data.rows())
        {
            return Err(Error::data(format!("query {} references rows beyond the dataset", q.row)));
        }
    }
    if matches!(spec.kind, crate::measures::MeasureKind::PrecisionAtK) {
        let min_cands = queries.iter().map(|q| q.gt.candidate_count()).min().unwrap();
        if spec.k > min_cands {
            return Err(Error::config(format!(
                "K={} exceeds the smallest candidate list ({min_cands})",
                spec.k
            )));
        }
    }

    let mut tw = uniform_triplet_weights(queries);
    let mut planes: Vec<Hyperplane> = Vec::with_capacity(bits);
    let mut weights: Vec<f64> = Vec::new();
    let mut warm: Option<WorkingSet> = None;
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut all_converged = true;

    for bit in 0..bits {
        let learn_cfg =
            HashLearnConfig { seed: exec::derive_seed(cfg.learn.seed, bit as u64), ..cfg.learn.clone() };
        let learned = learn_hash_function(&tw, data, &learn_cfg)?;
        if learned.spectral_fell_back {
            warnings.push(format!("bit {bit}: spectral initializer fell back to a random plane"));
        }
        if learned.used_raw_initializer {
            warnings.push(format!("bit {bit}: smooth optimization failed; kept a raw initializer"));
        }
        planes.push(learned.plane);

        let codes = encode_planes(&planes, data)?;
        if let Some(ws) = warm.as_mut() {
            crate::solver::extend_working_set(ws, &codes, queries);
        }
        let result = train_w(&codes, queries, spec, &cfg.solver, warm.take())?;
        if !result.converged {
            all_converged = false;
            warnings.push(format!(
                "bit {bit}: weight solve stopped at the {} iteration cap",
                cfg.solver.max_cp_iters
            ));
        }
        trace.extend(result.trace.iter().map(|r| BitTraceRow {
            bit,
            iter: r.iter,
            violation: r.violation,
            xi: r.xi,
            objective: r.objective,
            working_set_size: r.working_set_size,
        }));
        weights = result.solution.w.clone();
        warm = Some(result.working_set);

        if bit + 1 < bits {
            tw = triplet_weights(warm.as_ref().unwrap(), queries);
            if tw.is_empty() {
                // No active cuts: nothing to guide the next bit, so reuse the
                // first-iteration uniform weighting.
                warnings.push(format!("bit {bit}: no active duals; next bit uses uniform weights"));
                tw = uniform_triplet_weights(queries);
            }
        }
    }

    Ok(TrainOutput {
        model: HashModel::new(planes, weights),
        trace,
        warnings,
        all_converged,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::QueryNeighborhood;
    use crate::solver::WorkingSetEntry;
    use rand::Rng;

    pub(crate) fn random_triplet_instance(
        rng: &mut ChaCha8Rng,
        n_queries: usize,
        n_points: usize,
    ) -> (TripletWeightMap, DataMatrix) {
        let dims = rng.random_range(2..=4usize);
        let rows: Vec<Vec<f64>> = (0..n_points)
            .map(|_| (0..dims).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let data = DataMatrix::from_rows(&rows).unwrap();
        let queries: Vec<TrainQuery> = (0..n_queries)
            .map(|q| {
                let mut others: Vec<u32> =
                    (0..n_points as u32).filter(|&i| i as usize != q).collect();
                for i in (1..others.len()).rev() {
                    others.swap(i, rng.random_range(0..=i));
                }
                let p = rng.random_range(1..=2usize);
                let n = rng.random_range(1..=2usize);
                TrainQuery {
                    row: q,
                    gt: QueryNeighborhood::new(
                        q,
                        others[..p].to_vec(),
                        others[p..p + n].to_vec(),
                    ),
                }
            })
            .collect();
        let mut tw = TripletWeightMap::zeros(&queries);
        for q in &queries {
            for &j in q.gt.relevant() {
                for &k in q.gt.irrelevant() {
                    tw.add_weight(q.row, j, k, rng.random_range(0.1..1.0)).unwrap();
                }
            }
        }
        (tw, data)
    }

    fn one_pair_queries() -> Vec<TrainQuery> {
        vec![TrainQuery { row: 0, gt: QueryNeighborhood::new(0, vec![1], vec![2]) }]
    }

    #[test]
    fn zero_duals_yield_empty_map() {
        let queries = one_pair_queries();
        let mut ws = WorkingSet::new();
        ws.entries.push(WorkingSetEntry::new(vec![0.0], 0.5, vec![true], vec![vec![2, 1]]));
        let tw = triplet_weights(&ws, &queries);
        assert!(tw.is_empty());
        assert_eq!(tw.iter().count(), 0);
    }

    #[test]
    fn single_inverted_pair_weight() {
        // lambda = 0.5, |P| = |N| = 1, ranking [k, j]: weight 0.5 * 2 = 1.
        let queries = one_pair_queries();
        let mut ws = WorkingSet::new();
        ws.entries.push(
            WorkingSetEntry::new(vec![0.0], 0.5, vec![true], vec![vec![2, 1]]).with_lambda(0.5),
        );
        let tw = triplet_weights(&ws, &queries);
        assert!((tw.get(0, 1, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn entries_sharing_a_ranking_accumulate() {
        let queries = one_pair_queries();
        let mut ws = WorkingSet::new();
        for lambda in [0.5, 0.25] {
            ws.entries.push(
                WorkingSetEntry::new(vec![0.0], 0.5, vec![true], vec![vec![2, 1]])
                    .with_lambda(lambda),
            );
        }
        let tw = triplet_weights(&ws, &queries);
        assert!((tw.get(0, 1, 2) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn total_weight_identity() {
        // Sum of weights equals sum over entries of
        // lambda * sum over selected queries of 2 |S_i| / (|P_i| |N_i|).
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let queries: Vec<TrainQuery> = vec![
            TrainQuery { row: 0, gt: QueryNeighborhood::new(0, vec![1, 2], vec![3, 4, 5]) },
            TrainQuery { row: 6, gt: QueryNeighborhood::new(6, vec![7], vec![8, 9]) },
        ];
        let mut ws = WorkingSet::new();
        let mut expected = 0.0;
        for _ in 0..4 {
            let lambda = rng.random_range(0.0..1.0);
            let mut rankings = Vec::new();
            let mut c = Vec::new();
            for q in &queries {
                let selected = rng.random_range(0.0..1.0) > 0.3;
                c.push(selected);
                if !selected {
                    rankings.push(vec![]);
                    continue;
                }
                let mut order: Vec<u32> =
                    q.gt.relevant().iter().chain(q.gt.irrelevant()).copied().collect();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                // Count inversions of this ranking.
                let mut irr_seen = 0usize;
                let mut inv = 0usize;
                for &id in &order {
                    if q.gt.is_relevant(id) {
                        inv += irr_seen;
                    } else {
                        irr_seen += 1;
                    }
                }
                let pn = (q.gt.relevant().len() * q.gt.irrelevant().len()) as f64;
                expected += lambda * 2.0 * inv as f64 / pn;
                rankings.push(order);
            }
            ws.entries
                .push(WorkingSetEntry::new(vec![0.0], 0.1, c, rankings).with_lambda(lambda));
        }
        let tw = triplet_weights(&ws, &queries);
        assert!((tw.total_weight() - expected).abs() < 1e-9);
        for (_, _, _, w) in tw.iter() {
            assert!(w > 0.0 && w.is_finite());
        }
    }

    #[test]
    fn subproblem_value_cases() {
        let data =
            DataMatrix::from_rows(&[vec![0.0], vec![0.5], vec![4.0]]).unwrap();
        let queries = one_pair_queries();
        let tw = uniform_triplet_weights(&queries);

        // h constant over all points -> 0.
        let constant = Hyperplane::new(vec![1.0], 100.0);
        assert_eq!(subproblem_value(&constant, &tw, &data).unwrap(), 0.0);

        // Splits {i, j} from {k} -> weight of the single triplet (2/(1*1)).
        let split = Hyperplane::new(vec![-1.0], 2.0);
        assert_eq!(subproblem_value(&split, &tw, &data).unwrap(), 2.0);

        // Swapping relevant and irrelevant roles negates the value.
        let swapped =
            vec![TrainQuery { row: 0, gt: QueryNeighborhood::new(0, vec![2], vec![1]) }];
        let tw_swapped = uniform_triplet_weights(&swapped);
        assert_eq!(subproblem_value(&split, &tw_swapped, &data).unwrap(), -2.0);
    }

    #[test]
    fn surrogate_approaches_binary_value_as_alpha_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (tw, data) = random_triplet_instance(&mut rng, 3, 8);
        let plane = spectral::random_unit_plane(data.dims(), &mut rng);
        // Keep points bounded away from the plane: nudge b off any sample.
        let binary = subproblem_value(&plane, &tw, &data).unwrap();
        let mut last_gap = f64::INFINITY;
        for alpha in [10.0, 100.0, 1000.0, 10000.0] {
            let cfg = HashLearnConfig { alpha, smooth_eps: 1e-9, ..Default::default() };
            let (value, _) =
                smoothed_value_and_gradient(&plane.v, plane.b, &tw, &data, &cfg).unwrap();
            let gap = (value - binary).abs();
            assert!(gap <= last_gap + 1e-9, "gap grew: {last_gap} -> {gap}");
            last_gap = gap;
        }
        assert!(last_gap < 1e-3, "final gap {last_gap}");
    }

    #[test]
    fn learned_plane_beats_every_initializer() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (tw, data) = random_triplet_instance(&mut rng, 4, 10);
        let cfg = HashLearnConfig { seed: 5, ..Default::default() };
        let learned = learn_hash_function(&tw, &data, &cfg).unwrap();

        let (sp, _) = spectral_init(&tw, &data, exec::derive_seed(cfg.seed, 1)).unwrap();
        assert!(learned.value >= subproblem_value(&sp, &tw, &data).unwrap() - 1e-12);

        let graph = tw.pair_graph();
        if let Some((stump_plane, stump_value)) = stump::best_stump(&graph, &data) {
            assert!(learned.value >= stump_value - 1e-12);
            assert!(learned.value >= subproblem_value(&stump_plane, &tw, &data).unwrap() - 1e-12);
        }
        let mut prng = ChaCha8Rng::seed_from_u64(exec::derive_seed(cfg.seed, 2));
        for _ in 0..cfg.n_random_planes {
            let p = spectral::random_unit_plane(data.dims(), &mut prng);
            assert!(learned.value >= subproblem_value(&p, &tw, &data).unwrap() - 1e-12);
        }
    }

    #[test]
    fn one_dimensional_separable_triplets_reach_total_weight() {
        let data = DataMatrix::from_rows(&[
            vec![0.0],
            vec![0.25],
            vec![5.0],
            vec![0.5],
            vec![0.1],
            vec![7.0],
        ])
        .unwrap();
        let queries = vec![
            TrainQuery { row: 0, gt: QueryNeighborhood::new(0, vec![1], vec![2]) },
            TrainQuery { row: 3, gt: QueryNeighborhood::new(3, vec![4], vec![5]) },
        ];
        let tw = uniform_triplet_weights(&queries);
        let learned = learn_hash_function(&tw, &data, &HashLearnConfig::default()).unwrap();
        assert!((learned.value - tw.total_weight()).abs() < 1e-12);
    }

    #[test]
    fn learning_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (tw, data) = random_triplet_instance(&mut rng, 4, 10);
        let cfg = HashLearnConfig { seed: 11, ..Default::default() };
        let a = learn_hash_function(&tw, &data, &cfg).unwrap();
        let b = learn_hash_function(&tw, &data, &cfg).unwrap();
        assert_eq!(a.plane, b.plane);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn train_produces_requested_bits_and_is_deterministic() {
        let (data, queries) = two_cluster_instance();
        let spec = MeasureSpec::ndcg(4);
        let cfg = TrainConfig::default();
        let out = train_structhash(&data, &queries, &spec, 6, &cfg).unwrap();
        assert_eq!(out.model.bits(), 6);
        assert_eq!(out.model.weights.len(), 6);
        let again = train_structhash(&data, &queries, &spec, 6, &cfg).unwrap();
        assert_eq!(out.model, again.model);
    }

    pub(crate) fn two_cluster_instance() -> (DataMatrix, Vec<TrainQuery>) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut rows = Vec::new();
        for i in 0..24 {
            let center = if i < 12 { -3.0 } else { 3.0 };
            rows.push(vec![
                center + rng.random_range(-0.5..0.5),
                center + rng.random_range(-0.5..0.5),
            ]);
        }
        let data = DataMatrix::from_rows(&rows).unwrap();
        let labels: Vec<i64> = (0..24).map(|i| if i < 12 { 0 } else { 1 }).collect();
        let queries: Vec<TrainQuery> = (0..24)
            .map(|i| TrainQuery { row: i, gt: crate::data::ground_truth_by_label(&labels, i) })
            .collect();
        (data, queries)
    }
}
