//! Desk-scale verification suites: oracle equivalence of the inference fast
//! paths, LP optimality conditions of the restricted master, gradient
//! correctness of the smoothed subproblem, and exact metric values. The CLI
//! selftest command and the acceptance tests both run these.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codes::CodeMatrix;
use crate::data::{DataMatrix, QueryNeighborhood};
use crate::inference::{brute_force_most_violated, delta_psi, infer_most_violated, psi};
use crate::learner::{smoothed_value_and_gradient, HashLearnConfig, TripletWeightMap};
use crate::measures::{
    label_loss, ndcg_gain, score_auc, score_map, score_ndcg, score_precision_at_k, Interleaving,
    MeasureSpec, NdcgNormalizer,
};
use crate::solver::{solve_restricted_master, SolverConfig, TrainQuery, WorkingSet, WorkingSetEntry};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {} ({} cases, {:.2}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.seconds,
            self.detail
        )
    }
}

fn random_code_instance(
    rng: &mut ChaCha8Rng,
    bits: usize,
    min_total: usize,
) -> (CodeMatrix, QueryNeighborhood, Vec<f64>) {
    let (p, n) = loop {
        let p = rng.random_range(1..=3usize);
        let n = rng.random_range(1..=4usize);
        if p + n >= min_total {
            break (p, n);
        }
    };
    let rows: Vec<Vec<bool>> =
        (0..p + n + 1).map(|_| (0..bits).map(|_| rng.random()).collect()).collect();
    let codes = CodeMatrix::from_bits(p + n + 1, bits, &rows);
    let relevant: Vec<u32> = (1..=p as u32).collect();
    let irrelevant: Vec<u32> = (p as u32 + 1..=(p + n) as u32).collect();
    let w: Vec<f64> = (0..bits).map(|_| rng.random_range(0.0..2.0)).collect();
    (codes, QueryNeighborhood::new(0, relevant, irrelevant), w)
}

/// Loss-augmented inference vs. exhaustive enumeration, every measure,
/// objective agreement within 1e-9.
pub fn oracle_equivalence_suite(instances: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    let mut cases = 0;
    let mut failure = None;
    'outer: for trial in 0..instances {
        let (codes, gt, w) = random_code_instance(&mut rng, 8, 3);
        for spec in [
            MeasureSpec::auc(),
            MeasureSpec::precision_at(3),
            MeasureSpec::ndcg(3),
            MeasureSpec::ndcg_fixed_k(3),
            MeasureSpec::mean_average_precision(),
        ] {
            cases += 1;
            let fast = match infer_most_violated(&spec, 0, &w, &codes, &gt) {
                Ok(r) => r,
                Err(e) => {
                    failure = Some(format!("trial {trial} {:?}: {e}", spec.kind));
                    break 'outer;
                }
            };
            let oracle = brute_force_most_violated(&spec, 0, &w, &codes, &gt).unwrap();
            let err = (fast.objective - oracle.objective).abs();
            max_err = max_err.max(err);
            if err > 1e-9 {
                failure = Some(format!(
                    "trial {trial} {:?}: fast {} vs oracle {}",
                    spec.kind, fast.objective, oracle.objective
                ));
                break 'outer;
            }
        }
    }
    CheckResult {
        name: "oracle-equivalence",
        passed: failure.is_none(),
        cases,
        detail: failure.unwrap_or(format!("max objective error {max_err:.3e}")),
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Simplified pair-sum form of dpsi vs. the direct feature-map subtraction,
/// max component error 1e-12.
pub fn delta_psi_consistency_suite(instances: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    for _ in 0..instances {
        let (codes, gt, _) = random_code_instance(&mut rng, 8, 2);
        let mut order: Vec<u32> = gt.relevant().iter().chain(gt.irrelevant()).copied().collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let y = Interleaving::new(order);
        let y_true = Interleaving::ideal(&gt);
        let direct: Vec<f64> = psi(&codes, 0, &y_true, &gt)
            .iter()
            .zip(psi(&codes, 0, &y, &gt))
            .map(|(a, b)| a - b)
            .collect();
        let simplified = delta_psi(&codes, 0, &y, &gt);
        for (a, b) in direct.iter().zip(&simplified) {
            max_err = max_err.max((a - b).abs());
        }
    }
    CheckResult {
        name: "delta-psi-consistency",
        passed: max_err <= 1e-12,
        cases: instances,
        detail: format!("max component error {max_err:.3e}"),
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Master LP on random working sets: duality gap, primal feasibility,
/// complementary slackness, and the dual box/row constraints.
pub fn lp_duality_suite(instances: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, 0.0f64, 0.0f64, 0.0f64); // gap, infeas, cs, box
    let mut failure = None;
    for trial in 0..instances {
        let dims = rng.random_range(1..=32usize);
        let entries = rng.random_range(1..=30usize);
        let c = rng.random_range(0.5..10.0);
        let mut ws = WorkingSet::new();
        for _ in 0..entries {
            let a: Vec<f64> = (0..dims).map(|_| rng.random_range(-2.0..2.0)).collect();
            ws.entries.push(WorkingSetEntry::new(a, rng.random_range(0.0..1.0), vec![], vec![]));
        }
        let cfg = SolverConfig { c, ..Default::default() };
        let sol = match solve_restricted_master(&ws, dims, &cfg) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(format!("trial {trial}: {e}"));
                break;
            }
        };
        let primal: f64 = sol.w.iter().sum::<f64>() + c * sol.xi;
        let dual: f64 = ws.entries.iter().zip(&sol.duals).map(|(e, l)| e.b * l).sum();
        let gap = (primal - dual).abs();
        let mut infeas: f64 = 0.0;
        let mut cs: f64 = 0.0;
        for (e, l) in ws.entries.iter().zip(&sol.duals) {
            let slack: f64 =
                sol.w.iter().zip(&e.a).map(|(x, y)| x * y).sum::<f64>() + sol.xi - e.b;
            infeas = infeas.max(-slack);
            cs = cs.max(l * slack);
        }
        let lam_sum: f64 = sol.duals.iter().sum();
        let mut boxv: f64 = (lam_sum - c).max(-lam_sum).max(0.0);
        for b in 0..dims {
            let row: f64 = ws.entries.iter().zip(&sol.duals).map(|(e, l)| e.a[b] * l).sum();
            boxv = boxv.max(row - 1.0);
        }
        worst = (worst.0.max(gap), worst.1.max(infeas), worst.2.max(cs), worst.3.max(boxv));
        if gap > 1e-8 || infeas > 1e-8 || cs > 1e-6 || boxv > 1e-8 {
            failure = Some(format!(
                "trial {trial}: gap {gap:.2e} infeas {infeas:.2e} cs {cs:.2e} box {boxv:.2e}"
            ));
            break;
        }
    }
    CheckResult {
        name: "lp-duality",
        passed: failure.is_none(),
        cases: instances,
        detail: failure.unwrap_or(format!(
            "worst gap {:.2e}, infeasibility {:.2e}, comp-slack {:.2e}, box {:.2e}",
            worst.0, worst.1, worst.2, worst.3
        )),
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Analytic gradient of the smoothed subproblem vs. central finite
/// differences (step 1e-5), relative error 1e-4.
pub fn gradient_check_suite(instances: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dims = rng.random_range(2..=4usize);
        let n_points = rng.random_range(5..=9usize);
        let rows: Vec<Vec<f64>> = (0..n_points)
            .map(|_| (0..dims).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let data = DataMatrix::from_rows(&rows).unwrap();
        let queries: Vec<TrainQuery> = (0..2)
            .map(|q| {
                let mut others: Vec<u32> =
                    (0..n_points as u32).filter(|&i| i as usize != q).collect();
                for i in (1..others.len()).rev() {
                    others.swap(i, rng.random_range(0..=i));
                }
                TrainQuery {
                    row: q,
                    gt: QueryNeighborhood::new(q, others[..2].to_vec(), others[2..4].to_vec()),
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
        let cfg = HashLearnConfig::default();
        let v: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: f64 = rng.random_range(-0.5..0.5);
        let (_, grad) = smoothed_value_and_gradient(&v, b, &tw, &data, &cfg).unwrap();

        let h = 1e-5;
        let mut fd = vec![0.0; dims + 1];
        for i in 0..=dims {
            let mut vp = v.clone();
            let mut vm = v.clone();
            let (mut bp, mut bm) = (b, b);
            if i < dims {
                vp[i] += h;
                vm[i] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            let (fp, _) = smoothed_value_and_gradient(&vp, bp, &tw, &data, &cfg).unwrap();
            let (fm, _) = smoothed_value_and_gradient(&vm, bm, &tw, &data, &cfg).unwrap();
            fd[i] = (fp - fm) / (2.0 * h);
        }
        let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(num / den);
    }
    CheckResult {
        name: "gradient-check",
        passed: worst <= 1e-4,
        cases: instances,
        detail: format!("worst relative error {worst:.3e}"),
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Exact hand-derived metric values and the gain/loss conventions.
pub fn metric_property_suite() -> CheckResult {
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();
    let mut cases = 0;
    let mut check = |name: &str, actual: f64, expect: f64, failures: &mut Vec<String>| {
        cases += 1;
        if (actual - expect).abs() > 1e-9 {
            failures.push(format!("{name}: got {actual}, want {expect}"));
        }
    };

    let gt = QueryNeighborhood::new(usize::MAX, vec![0, 2], vec![1, 3]);
    let y = Interleaving::new(vec![0, 1, 2, 3]);
    let y_true = Interleaving::ideal(&gt);
    check("auc [p,n,p,n]", score_auc(&y, &gt).unwrap(), 0.75, &mut failures);
    check("map [p,n,p,n]", score_map(&y, &gt).unwrap(), 5.0 / 6.0, &mut failures);
    check(
        "ndcg ideal-normalizer",
        score_ndcg(&y, &gt, 3, NdcgNormalizer::Ideal).unwrap(),
        (1.0 + 1.0 / 3f64.log2()) / 2.0,
        &mut failures,
    );
    check(
        "ndcg fixed-normalizer",
        score_ndcg(&y, &gt, 3, NdcgNormalizer::FixedK).unwrap(),
        (1.0 + 1.0 / 3f64.log2()) / (2.0 + 1.0 / 3f64.log2()),
        &mut failures,
    );
    check("p@2", score_precision_at_k(&y, &gt, 2).unwrap(), 0.5, &mut failures);
    check("gain(1)", ndcg_gain(1, 3), 1.0, &mut failures);
    check("gain(2)", ndcg_gain(2, 3), 1.0, &mut failures);
    check("gain(k+1)", ndcg_gain(4, 3), 0.0, &mut failures);
    for spec in [
        MeasureSpec::auc(),
        MeasureSpec::precision_at(2),
        MeasureSpec::ndcg(3),
        MeasureSpec::mean_average_precision(),
    ] {
        check(
            "self-loss",
            label_loss(&spec, &y_true, &y_true, &gt).unwrap(),
            0.0,
            &mut failures,
        );
    }
    check(
        "auc reversed",
        label_loss(&MeasureSpec::auc(), &y_true, &y_true.reversed(), &gt).unwrap(),
        1.0,
        &mut failures,
    );

    CheckResult {
        name: "metric-properties",
        passed: failures.is_empty(),
        cases,
        detail: if failures.is_empty() { "all hand values exact".into() } else { failures.join("; ") },
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// The four desk-scale suites at their standard sizes.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        oracle_equivalence_suite(200, seed),
        delta_psi_consistency_suite(100, seed.wrapping_add(1)),
        lp_duality_suite(100, seed.wrapping_add(2)),
        gradient_check_suite(50, seed.wrapping_add(3)),
        metric_property_suite(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_at_reduced_size() {
        for r in [
            oracle_equivalence_suite(25, 1),
            delta_psi_consistency_suite(25, 2),
            lp_duality_suite(25, 3),
            gradient_check_suite(10, 4),
            metric_property_suite(),
        ] {
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn wrong_expected_value_is_reported_with_its_name() {
        // The comparison helper drives every metric check: a wrong gain
        // value must surface as a named failure.
        let mut failures = Vec::new();
        let mut cases = 0;
        let mut check = |name: &str, actual: f64, expect: f64, failures: &mut Vec<String>| {
            cases += 1;
            if (actual - expect).abs() > 1e-9 {
                failures.push(format!("{name}: got {actual}, want {expect}"));
            }
        };
        check("gain(2)", ndcg_gain(2, 3), 0.5, &mut failures); // deliberately wrong
        assert_eq!(cases, 1);
        assert_eq!(failures.len(), 1);
        assert!(failures[0].starts_with("gain(2)"));
    }
}
