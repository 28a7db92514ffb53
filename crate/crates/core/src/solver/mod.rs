//! The 1-slack cutting-plane trainer for the bit weights: a restricted
//! master LP (l1 objective, non-negative weights, one shared slack) whose
//! exact duals drive both convergence and the hash-function subproblem.

pub mod simplex;

use serde::Serialize;

use crate::codes::CodeMatrix;
use crate::data::QueryNeighborhood;
use crate::error::{Error, Result};
use crate::exec;
use crate::inference::{delta_psi, infer_most_violated_cached, ScoreCache};
use crate::measures::{Interleaving, MeasureSpec};

/// One aggregated cutting-plane constraint: w . a + xi >= b.
#[derive(Debug, Clone)]
pub struct WorkingSetEntry {
    /// (1/m) sum over selected queries of dpsi at their most-violated ranking.
    pub a: Vec<f64>,
    /// (1/m) sum over selected queries of their loss; always in [0, 1].
    pub b: f64,
    /// Which queries participate in this constraint.
    pub c: Vec<bool>,
    /// Per-query most-violated ranking; empty for unselected queries.
    pub rankings: Vec<Vec<u32>>,
    /// Dual value from the latest master solve.
    pub lambda: f64,
    /// Consecutive master solves with lambda == 0, for pruning.
    zero_streak: u32,
}

impl WorkingSetEntry {
    /// A fresh cut; the dual is filled in by the next master solve.
    pub fn new(a: Vec<f64>, b: f64, c: Vec<bool>, rankings: Vec<Vec<u32>>) -> Self {
        WorkingSetEntry { a, b, c, rankings, lambda: 0.0, zero_streak: 0 }
    }

    /// As `new`, with the dual preset (used when reconstructing a set).
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct WorkingSet {
    pub entries: Vec<WorkingSetEntry>,
}

impl WorkingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Zero-pads every entry's `a` vector up to `dims` (warm start across
    /// column-generation iterations; the new bit contributes nothing to
    /// retained cuts until they are regenerated).
    pub fn pad_to(&mut self, dims: usize) {
        for e in &mut self.entries {
            if e.a.len() < dims {
                e.a.resize(dims, 0.0);
            }
        }
    }

    fn record_duals(&mut self, duals: &[f64]) {
        debug_assert_eq!(duals.len(), self.entries.len());
        for (e, &l) in self.entries.iter_mut().zip(duals) {
            e.lambda = l;
            if l <= 1e-12 {
                e.zero_streak += 1;
            } else {
                e.zero_streak = 0;
            }
        }
    }

    /// Drops entries whose dual has been zero for `streak` consecutive
    /// solves, as long as they are strictly slack at the current solution
    /// (so removing them cannot move the optimum).
    fn prune(&mut self, w: &[f64], xi: f64, streak: u32) {
        self.entries.retain(|e| {
            let slack = dot(w, &e.a) + xi - e.b;
            !(e.zero_streak >= streak && slack > 1e-9)
        });
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solution of the restricted master: min sum(w) + C xi subject to the
/// working-set cuts, w >= 0, xi >= 0.
#[derive(Debug, Clone)]
pub struct MasterSolution {
    pub w: Vec<f64>,
    pub xi: f64,
    /// One dual per working-set entry.
    pub duals: Vec<f64>,
    /// sum(w) + C xi at the optimum.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Regularization/penalty constant C.
    pub c: f64,
    /// Cutting-plane termination tolerance, absolute on the violation.
    pub eps_cp: f64,
    pub max_cp_iters: usize,
    /// Duality-gap tolerance of each master solve.
    pub lp_tol: f64,
    /// Entries whose dual stays zero this many consecutive solves are
    /// dropped once strictly slack.
    pub prune_streak: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { c: 1.0, eps_cp: 1e-3, max_cp_iters: 100, lp_tol: 1e-8, prune_streak: 10 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c <= 0.0 || self.eps_cp <= 0.0 || self.lp_tol <= 0.0 || self.max_cp_iters == 0 {
            return Err(Error::config("solver constants must be positive"));
        }
        Ok(())
    }
}

/// Solves the restricted master exactly through its dual:
/// max sum_t lambda_t b_t  s.t.  sum_t lambda_t a_t <= 1 (per bit),
/// sum_t lambda_t <= C, lambda >= 0. The row multipliers of the dual are the
/// master's (w, xi).
pub fn solve_restricted_master(
    ws: &WorkingSet,
    dims: usize,
    cfg: &SolverConfig,
) -> Result<MasterSolution> {
    if ws.is_empty() {
        return Ok(MasterSolution { w: vec![0.0; dims], xi: 0.0, duals: vec![], objective: 0.0 });
    }
    for (t, e) in ws.entries.iter().enumerate() {
        if e.a.len() != dims {
            return Err(Error::DimMismatch(format!(
                "working-set entry {t} has {} dims, expected {dims}",
                e.a.len()
            )));
        }
    }
    let t_count = ws.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dims + 1);
    for b in 0..dims {
        rows.push(ws.entries.iter().map(|e| e.a[b]).collect());
    }
    rows.push(vec![1.0; t_count]);
    let mut rhs = vec![1.0; dims];
    rhs.push(cfg.c);
    let objective_coeffs: Vec<f64> = ws.entries.iter().map(|e| e.b).collect();

    let sol = simplex::solve_standard_max(&rows, &rhs, &objective_coeffs)?;
    let w = sol.duals[..dims].to_vec();
    let xi = sol.duals[dims];
    let primal_objective: f64 = w.iter().sum::<f64>() + cfg.c * xi;
    let gap = (primal_objective - sol.objective).abs();
    if gap > cfg.lp_tol {
        return Err(Error::numerical(format!(
            "restricted master duality gap {gap:.3e} exceeds {:.1e}; \
             w={w:?} xi={xi} lambda={:?} dual_obj={}",
            cfg.lp_tol, sol.x, sol.objective
        )));
    }
    Ok(MasterSolution { w, xi, duals: sol.x, objective: primal_objective })
}

/// One query's contribution to a cut: its most-violated ranking with the
/// loss, objective, and dpsi evaluated there.
#[derive(Debug, Clone)]
pub struct QueryViolation {
    pub objective: f64,
    pub loss: f64,
    pub delta_psi: Vec<f64>,
    pub ranking: Vec<u32>,
}

/// Aggregates per-query inference results into a 1-slack cut. A query is
/// selected when its objective is strictly positive. Returns the entry and
/// the violation b - w.a - xi of the cut at the current solution.
pub fn aggregate_violation(
    per_query: &[QueryViolation],
    w: &[f64],
    xi: f64,
) -> (WorkingSetEntry, f64) {
    let m = per_query.len() as f64;
    let dims = w.len();
    let mut a = vec![0.0; dims];
    let mut b = 0.0;
    let mut c = Vec::with_capacity(per_query.len());
    let mut rankings = Vec::with_capacity(per_query.len());
    for q in per_query {
        let selected = q.objective > 0.0;
        c.push(selected);
        if selected {
            for (acc, v) in a.iter_mut().zip(&q.delta_psi) {
                *acc += v;
            }
            b += q.loss;
            rankings.push(q.ranking.clone());
        } else {
            rankings.push(Vec::new());
        }
    }
    for v in &mut a {
        *v /= m;
    }
    b /= m;
    let violation = b - dot(w, &a) - xi;
    (WorkingSetEntry { a, b, c, rankings, lambda: 0.0, zero_streak: 0 }, violation)
}

/// A training query: its row in the code matrix plus its (sampled)
/// neighborhood.
#[derive(Debug, Clone)]
pub struct TrainQuery {
    pub row: usize,
    pub gt: QueryNeighborhood,
}

/// One cutting-plane iteration, as recorded in the trace.
#[derive(Debug, Clone, Serialize)]
pub struct CpIteration {
    pub iter: usize,
    pub violation: f64,
    pub xi: f64,
    pub objective: f64,
    pub working_set_size: usize,
}

#[derive(Debug)]
pub struct TrainWResult {
    pub solution: MasterSolution,
    pub working_set: WorkingSet,
    pub trace: Vec<CpIteration>,
    pub converged: bool,
}

/// Cutting-plane loop: solve the master, fan inference out over queries,
/// aggregate the most-violated cut, and repeat until the violation drops to
/// eps_cp or the iteration cap. The working set may be warm-started from a
/// previous bit count; retained cuts are zero-padded.
pub fn train_w(
    codes: &CodeMatrix,
    queries: &[TrainQuery],
    spec: &MeasureSpec,
    cfg: &SolverConfig,
    warm: Option<WorkingSet>,
) -> Result<TrainWResult> {
    cfg.validate()?;
    spec.validate()?;
    if queries.is_empty() {
        return Err(Error::data("training requires at least one query"));
    }
    for q in queries {
        if !q.gt.has_both_sides() {
            return Err(Error::data(format!(
                "query {} is missing a neighbor side; sample both sets before training",
                q.row
            )));
        }
    }
    let caches: Vec<ScoreCache> =
        exec::map_slice(queries, |q| ScoreCache::build(codes, q.row, &q.gt));
    train_w_cached(codes, queries, &caches, spec, cfg, warm)
}

/// As `train_w`, with prebuilt per-query score caches (the column-generation
/// driver reuses them across bits after rebuilding on each new bit).
pub fn train_w_cached(
    codes: &CodeMatrix,
    queries: &[TrainQuery],
    caches: &[ScoreCache],
    spec: &MeasureSpec,
    cfg: &SolverConfig,
    warm: Option<WorkingSet>,
) -> Result<TrainWResult> {
    let dims = codes.bits();
    let mut ws = warm.unwrap_or_default();
    ws.pad_to(dims);
    let mut trace = Vec::new();

    for iter in 1..=cfg.max_cp_iters {
        let sol = solve_restricted_master(&ws, dims, cfg)?;
        ws.record_duals(&sol.duals);
        ws.prune(&sol.w, sol.xi, cfg.prune_streak);

        let per_query: Vec<Result<QueryViolation>> =
            exec::map_indices(queries.len(), |qi| {
                let q = &queries[qi];
                let r = infer_most_violated_cached(spec, &caches[qi], &sol.w)?;
                let dp = delta_psi(codes, q.row, &r.ranking, &q.gt);
                Ok(QueryViolation {
                    objective: r.objective,
                    loss: r.loss,
                    delta_psi: dp,
                    ranking: r.ranking.order().to_vec(),
                })
            });
        let per_query: Vec<QueryViolation> =
            per_query.into_iter().collect::<Result<Vec<_>>>()?;

        let (entry, violation) = aggregate_violation(&per_query, &sol.w, sol.xi);
        trace.push(CpIteration {
            iter,
            violation,
            xi: sol.xi,
            objective: sol.objective,
            working_set_size: ws.len(),
        });
        if violation <= cfg.eps_cp {
            return Ok(TrainWResult { solution: sol, working_set: ws, trace, converged: true });
        }
        ws.entries.push(entry);
    }

    // Iteration cap: re-solve once so the returned duals cover every entry.
    let sol = solve_restricted_master(&ws, dims, cfg)?;
    ws.record_duals(&sol.duals);
    log::warn!(
        "cutting-plane loop hit the {}-iteration cap without reaching eps {}",
        cfg.max_cp_iters,
        cfg.eps_cp
    );
    Ok(TrainWResult { solution: sol, working_set: ws, trace, converged: false })
}

/// Extends every retained cut with the exact coefficients of newly added
/// bits, recomputed from the stored per-query rankings. Zero-padding instead
/// would make inherited cuts blind to the new bit, letting the very first
/// violation check pass with zero weight on it and stalling column
/// generation on a repeated hash function.
pub fn extend_working_set(ws: &mut WorkingSet, codes: &CodeMatrix, queries: &[TrainQuery]) {
    let bits = codes.bits();
    let m = queries.len() as f64;
    for entry in &mut ws.entries {
        let old = entry.a.len();
        if old >= bits {
            continue;
        }
        let mut extension = vec![0.0; bits - old];
        debug_assert_eq!(entry.c.len(), queries.len());
        for (q, (&selected, ranking)) in
            queries.iter().zip(entry.c.iter().zip(&entry.rankings))
        {
            if !selected || ranking.is_empty() {
                continue;
            }
            let dp = crate::inference::delta_psi_bits(codes, q.row, ranking, &q.gt, old..bits);
            for (acc, v) in extension.iter_mut().zip(&dp) {
                *acc += v;
            }
        }
        for v in &mut extension {
            *v /= m;
        }
        entry.a.extend_from_slice(&extension);
    }
}

/// Reconstructs the interleavings stored in a working-set entry.
pub fn entry_rankings(entry: &WorkingSetEntry) -> Vec<Option<Interleaving>> {
    entry
        .rankings
        .iter()
        .map(|o| if o.is_empty() { None } else { Some(Interleaving::new(o.clone())) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::CodeMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn entry(a: Vec<f64>, b: f64) -> WorkingSetEntry {
        WorkingSetEntry { a, b, c: vec![true], rankings: vec![vec![]], lambda: 0.0, zero_streak: 0 }
    }

    #[test]
    fn empty_working_set_gives_zero_solution() {
        let cfg = SolverConfig::default();
        let sol = solve_restricted_master(&WorkingSet::new(), 4, &cfg).unwrap();
        assert_eq!(sol.w, vec![0.0; 4]);
        assert_eq!(sol.xi, 0.0);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn single_entry_analytic_solution() {
        // min w + 10 xi s.t. 2w + xi >= 1: w = 1/2, xi = 0, lambda = 1/2.
        let mut ws = WorkingSet::new();
        ws.entries.push(entry(vec![2.0], 1.0));
        let cfg = SolverConfig { c: 10.0, ..Default::default() };
        let sol = solve_restricted_master(&ws, 1, &cfg).unwrap();
        assert!((sol.w[0] - 0.5).abs() < 1e-10);
        assert!(sol.xi.abs() < 1e-10);
        assert!((sol.objective - 0.5).abs() < 1e-10);
        assert!((sol.duals[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn single_entry_zero_column_uses_slack() {
        // min w + 3 xi s.t. 0w + xi >= 1: w = 0, xi = 1, lambda = 3.
        let mut ws = WorkingSet::new();
        ws.entries.push(entry(vec![0.0], 1.0));
        let cfg = SolverConfig { c: 3.0, ..Default::default() };
        let sol = solve_restricted_master(&ws, 1, &cfg).unwrap();
        assert!(sol.w[0].abs() < 1e-10);
        assert!((sol.xi - 1.0).abs() < 1e-10);
        assert!((sol.objective - 3.0).abs() < 1e-10);
        assert!((sol.duals[0] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn master_satisfies_duality_feasibility_and_box_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let cfg = SolverConfig::default();
        for _ in 0..30 {
            let dims = rng.random_range(1..=16usize);
            let t = rng.random_range(1..=12usize);
            let mut ws = WorkingSet::new();
            for _ in 0..t {
                let a: Vec<f64> = (0..dims).map(|_| rng.random_range(-2.0..2.0)).collect();
                ws.entries.push(entry(a, rng.random_range(0.0..1.0)));
            }
            let sol = solve_restricted_master(&ws, dims, &cfg).unwrap();
            // Primal feasibility.
            for e in &ws.entries {
                assert!(dot(&sol.w, &e.a) + sol.xi >= e.b - 1e-8);
            }
            assert!(sol.w.iter().all(|&x| x >= 0.0));
            assert!(sol.xi >= 0.0);
            // Dual box and row constraints.
            let lam_sum: f64 = sol.duals.iter().sum();
            assert!((-1e-8..=cfg.c + 1e-8).contains(&lam_sum));
            for b in 0..dims {
                let row: f64 =
                    ws.entries.iter().zip(&sol.duals).map(|(e, l)| e.a[b] * l).sum();
                assert!(row <= 1.0 + 1e-8);
            }
            // Complementary slackness.
            for (e, l) in ws.entries.iter().zip(&sol.duals) {
                let slack = dot(&sol.w, &e.a) + sol.xi - e.b;
                assert!(l * slack <= 1e-6, "lambda {l} slack {slack}");
            }
        }
    }

    #[test]
    fn aggregate_violation_cases() {
        // All objectives <= 0: nothing selected, violation = -xi.
        let q = QueryViolation {
            objective: 0.0,
            loss: 0.3,
            delta_psi: vec![1.0, 2.0],
            ranking: vec![1, 2],
        };
        let (e, v) = aggregate_violation(&[q], &[0.5, 0.5], 0.25);
        assert!(!e.c[0]);
        assert_eq!(e.b, 0.0);
        assert_eq!(e.a, vec![0.0, 0.0]);
        assert!(e.rankings[0].is_empty());
        assert_eq!(v, -0.25);

        // Single selected query: a = dpsi, b = loss.
        let q = QueryViolation {
            objective: 0.7,
            loss: 0.7,
            delta_psi: vec![0.25, -0.5],
            ranking: vec![2, 1],
        };
        let (e, v) = aggregate_violation(&[q.clone()], &[0.0, 0.0], 0.0);
        assert_eq!(e.a, q.delta_psi);
        assert_eq!(e.b, q.loss);
        assert!((v - 0.7).abs() < 1e-15);
    }

    #[test]
    fn aggregate_violation_identity_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let m = rng.random_range(1..10usize);
            let dims = 4;
            let w: Vec<f64> = (0..dims).map(|_| rng.random_range(0.0..1.0)).collect();
            let xi = rng.random_range(0.0..0.5);
            let qs: Vec<QueryViolation> = (0..m)
                .map(|_| {
                    let dp: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let loss = rng.random_range(0.0..1.0);
                    QueryViolation {
                        objective: loss - dot(&w, &dp),
                        loss,
                        delta_psi: dp,
                        ranking: vec![0],
                    }
                })
                .collect();
            let (_, violation) = aggregate_violation(&qs, &w, xi);
            let direct: f64 = qs
                .iter()
                .filter(|q| q.objective > 0.0)
                .map(|q| q.loss - dot(&w, &q.delta_psi))
                .sum::<f64>()
                / m as f64
                - xi;
            assert!((violation - direct).abs() < 1e-9);
        }
    }

    fn separable_instance() -> (CodeMatrix, Vec<TrainQuery>) {
        // Query rows 0 and 1; each has one relevant twin (same code) and two
        // irrelevant opposites, with wide margins at every bit.
        let rows = vec![
            vec![true, true, true, true],
            vec![false, false, false, false],
            vec![true, true, true, true],
            vec![false, false, false, false],
            vec![false, false, false, false],
            vec![true, true, true, true],
        ];
        let codes = CodeMatrix::from_bits(6, 4, &rows);
        let queries = vec![
            TrainQuery {
                row: 0,
                gt: QueryNeighborhood::new(0, vec![2], vec![3, 4]),
            },
            TrainQuery {
                row: 1,
                gt: QueryNeighborhood::new(1, vec![3], vec![2, 5]),
            },
        ];
        (codes, queries)
    }

    #[test]
    fn separable_instance_converges_with_small_slack() {
        let (codes, queries) = separable_instance();
        let cfg = SolverConfig::default();
        let spec = MeasureSpec::auc();
        let out = train_w(&codes, &queries, &spec, &cfg, None).unwrap();
        assert!(out.converged);
        assert!(out.solution.xi <= cfg.eps_cp);
        // Every cut in the working set is satisfied.
        for e in &out.working_set.entries {
            assert!(dot(&out.solution.w, &e.a) + out.solution.xi >= e.b - 1e-8);
        }
    }

    #[test]
    fn master_objective_is_nondecreasing_across_iterations() {
        let (codes, queries) = separable_instance();
        let out =
            train_w(&codes, &queries, &MeasureSpec::ndcg(2), &SolverConfig::default(), None)
                .unwrap();
        for pair in out.trace.windows(2) {
            assert!(pair[1].objective >= pair[0].objective - 1e-10);
        }
    }

    #[test]
    fn warm_start_reaches_same_objective_as_cold() {
        let (codes, queries) = separable_instance();
        let cfg = SolverConfig { eps_cp: 1e-6, ..Default::default() };
        let spec = MeasureSpec::ndcg(2);
        let cold = train_w(&codes, &queries, &spec, &cfg, None).unwrap();
        let warm =
            train_w(&codes, &queries, &spec, &cfg, Some(cold.working_set.clone())).unwrap();
        assert!((cold.solution.objective - warm.solution.objective).abs() < 1e-6);
    }

    #[test]
    fn small_c_stalls_at_pure_slack_and_larger_c_trains() {
        // Three queries whose helpful bits are disjoint, so every component
        // of the aggregated cut is 2/3 < 1. At C = 1 the LP then prefers
        // pure slack (w = 0, xi = 1) and the all-inverted cut certifies its
        // own optimality; a larger C makes the weight route cheaper.
        let mut rows = vec![vec![true; 6]; 1];
        rows.clear();
        for q in 0..3usize {
            let query = vec![true; 6];
            let mut relevant = vec![true; 6];
            relevant[2 * q] = false;
            let mut irrelevant = vec![true; 6];
            irrelevant[2 * q] = false;
            irrelevant[2 * q + 1] = false;
            rows.extend([query, relevant, irrelevant]);
        }
        let codes = CodeMatrix::from_bits(9, 6, &rows);
        let queries: Vec<TrainQuery> = (0..3)
            .map(|q| TrainQuery {
                row: 3 * q,
                gt: QueryNeighborhood::new(
                    3 * q,
                    vec![3 * q as u32 + 1],
                    vec![3 * q as u32 + 2],
                ),
            })
            .collect();
        let spec = MeasureSpec::auc();

        let stalled =
            train_w(&codes, &queries, &spec, &SolverConfig::default(), None).unwrap();
        assert!(stalled.converged);
        assert!(stalled.solution.w.iter().all(|&x| x == 0.0));
        assert!((stalled.solution.xi - 1.0).abs() < 1e-9);

        let cfg = SolverConfig { c: 10.0, ..Default::default() };
        let trained = train_w(&codes, &queries, &spec, &cfg, None).unwrap();
        assert!(trained.converged);
        assert!(trained.solution.xi < 0.5);
        assert!(trained.solution.w.iter().any(|&x| x > 0.0));
    }

    #[test]
    fn rejects_queries_with_empty_sides() {
        let rows = vec![vec![true], vec![false], vec![true]];
        let codes = CodeMatrix::from_bits(3, 1, &rows);
        let queries =
            vec![TrainQuery { row: 0, gt: QueryNeighborhood::new(0, vec![], vec![1, 2]) }];
        assert!(train_w(&codes, &queries, &MeasureSpec::auc(), &SolverConfig::default(), None)
            .is_err());
    }
}
