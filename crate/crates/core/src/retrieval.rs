//! Encoding, weighted-Hamming ranking, retrieval metrics over test queries,
//! and the random-projection baseline.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codes::CodeMatrix;
use crate::data::{DataMatrix, QueryNeighborhood};
use crate::error::{Error, Result};
use crate::exec;
use crate::measures::{
    score_auc, score_map, score_ndcg, score_precision_at_k, Interleaving, NdcgNormalizer,
};
use crate::model::{encode_planes, HashModel, Hyperplane};

/// Encodes data that is already in hashing space (post standardization and
/// kernel map).
pub fn encode(model: &HashModel, data: &DataMatrix) -> Result<CodeMatrix> {
    model.validate()?;
    encode_planes(&model.planes, data)
}

/// Applies the model's preprocessing chain to raw features, then encodes.
pub fn encode_raw(model: &HashModel, raw: &DataMatrix) -> Result<CodeMatrix> {
    model.validate()?;
    let mapped = model.preprocess(raw)?;
    encode_planes(&model.planes, &mapped)
}

/// Weighted Hamming distance between two rows of one code matrix.
pub fn weighted_hamming(w: &[f64], codes: &CodeMatrix, i: usize, j: usize) -> Result<f64> {
    if w.len() != codes.bits() {
        return Err(Error::DimMismatch(format!(
            "{} weights for {}-bit codes",
            w.len(),
            codes.bits()
        )));
    }
    Ok(codes.weighted_hamming(w, i, j))
}

fn cross_weighted_hamming(a: &CodeMatrix, i: usize, b: &CodeMatrix, j: usize, w: &[f64]) -> f64 {
    let mut total = 0.0;
    for (wi, (x, y)) in a.row_words(i).iter().zip(b.row_words(j)).enumerate() {
        let mut xor = x ^ y;
        while xor != 0 {
            let bit = xor.trailing_zeros() as usize;
            total += w[wi * 64 + bit];
            xor &= xor - 1;
        }
    }
    total
}

/// Ranks every database row by ascending weighted Hamming distance to the
/// query code, ties by ascending index.
pub fn rank_database(
    query_codes: &CodeMatrix,
    query_row: usize,
    db: &CodeMatrix,
    w: &[f64],
) -> Result<Interleaving> {
    if query_codes.bits() != db.bits() || w.len() != db.bits() {
        return Err(Error::DimMismatch(format!(
            "query codes ({} bits), database ({} bits) and weights ({}) disagree",
            query_codes.bits(),
            db.bits(),
            w.len()
        )));
    }
    let mut order: Vec<(f64, u32)> = (0..db.rows())
        .map(|j| (cross_weighted_hamming(query_codes, query_row, db, j, w), j as u32))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(Interleaving::new(order.into_iter().map(|(_, j)| j).collect()))
}

/// Rankings of many queries against one database, fanned out per query.
pub fn rank_all(
    query_codes: &CodeMatrix,
    db: &CodeMatrix,
    w: &[f64],
) -> Result<Vec<Interleaving>> {
    let results = exec::map_indices(query_codes.rows(), |q| {
        rank_database(query_codes, q, db, w)
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryMetrics {
    pub query: usize,
    pub ndcg_at_k: f64,
    pub precision_at_k: f64,
    pub average_precision: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrPoint {
    pub cutoff: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub bits: usize,
    pub k: usize,
    pub seed: u64,
    /// Queries included in the means.
    pub evaluated_queries: usize,
    /// Queries excluded for lacking a relevant or irrelevant side.
    pub skipped_queries: usize,
    pub mean_ndcg_at_k: f64,
    pub mean_precision_at_k: f64,
    pub mean_average_precision: f64,
    pub mean_auc: f64,
    pub per_query: Vec<QueryMetrics>,
    /// Mean precision/recall at every retrieved-count cutoff.
    pub pr_curve: Vec<PrPoint>,
}

/// Scores per-query rankings and aggregates means plus the precision-recall
/// curve. Queries without both neighbor sides are excluded and counted.
pub fn evaluate(
    rankings: &[Interleaving],
    ground_truth: &[QueryNeighborhood],
    k: usize,
    bits: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if rankings.len() != ground_truth.len() {
        return Err(Error::data(format!(
            "{} rankings for {} ground-truth sets",
            rankings.len(),
            ground_truth.len()
        )));
    }
    if rankings.is_empty() {
        return Err(Error::data("nothing to evaluate"));
    }
    let n = rankings[0].len();
    if k < 1 || k > n {
        return Err(Error::config(format!("K={k} out of range for a database of {n}")));
    }

    let mut per_query = Vec::new();
    let mut skipped = 0usize;
    let mut pr_precision = vec![0.0; n];
    let mut pr_recall = vec![0.0; n];
    for (qi, (y, gt)) in rankings.iter().zip(ground_truth).enumerate() {
        if y.len() != n {
            return Err(Error::data("rankings cover databases of different sizes"));
        }
        if !gt.has_both_sides() {
            skipped += 1;
            continue;
        }
        per_query.push(QueryMetrics {
            query: qi,
            ndcg_at_k: score_ndcg(y, gt, k, NdcgNormalizer::Ideal)?,
            precision_at_k: score_precision_at_k(y, gt, k)?,
            average_precision: score_map(y, gt)?,
            auc: score_auc(y, gt)?,
        });
        let mut hits = 0usize;
        let total_relevant = gt.relevant().len();
        for (i0, &id) in y.order().iter().enumerate() {
            if gt.is_relevant(id) {
                hits += 1;
            }
            pr_precision[i0] += hits as f64 / (i0 + 1) as f64;
            pr_recall[i0] += hits as f64 / total_relevant as f64;
        }
    }
    if per_query.is_empty() {
        return Err(Error::UndefinedMeasure(
            "every query was skipped; no ground truth to evaluate against".into(),
        ));
    }

    let m = per_query.len() as f64;
    let pr_curve = (0..n)
        .map(|i0| PrPoint {
            cutoff: i0 + 1,
            precision: pr_precision[i0] / m,
            recall: pr_recall[i0] / m,
        })
        .collect();
    Ok(MetricsReport {
        bits,
        k,
        seed,
        evaluated_queries: per_query.len(),
        skipped_queries: skipped,
        mean_ndcg_at_k: per_query.iter().map(|q| q.ndcg_at_k).sum::<f64>() / m,
        mean_precision_at_k: per_query.iter().map(|q| q.precision_at_k).sum::<f64>() / m,
        mean_average_precision: per_query.iter().map(|q| q.average_precision).sum::<f64>() / m,
        mean_auc: per_query.iter().map(|q| q.auc).sum::<f64>() / m,
        per_query,
        pr_curve,
    })
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::data(format!("report serialization failed: {e}")))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// One row per metric at the report's K.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("metric,k,value\n");
        out.push_str(&format!("ndcg,{},{}\n", self.k, self.mean_ndcg_at_k));
        out.push_str(&format!("precision,{},{}\n", self.k, self.mean_precision_at_k));
        out.push_str(&format!("map,,{}\n", self.mean_average_precision));
        out.push_str(&format!("auc,,{}\n", self.mean_auc));
        std::fs::write(path, out)?;
        Ok(())
    }

    /// One row per retrieved-count cutoff.
    pub fn write_pr_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("cutoff,precision,recall\n");
        for p in &self.pr_curve {
            out.push_str(&format!("{},{},{}\n", p.cutoff, p.precision, p.recall));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Random-hyperplane baseline: standard-normal projections, zero offsets,
/// unit bit weights.
pub fn lsh_baseline(dims: usize, bits: usize, seed: u64) -> Result<HashModel> {
    if bits == 0 || dims == 0 {
        return Err(Error::config("baseline needs at least one bit and one dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes: Vec<Hyperplane> = (0..bits)
        .map(|_| {
            let v: Vec<f64> =
                (0..dims).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            Hyperplane::new(v, 0.0)
        })
        .collect();
    Ok(HashModel::new(planes, vec![1.0; bits]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn codes_of(rows: &[Vec<bool>]) -> CodeMatrix {
        CodeMatrix::from_bits(rows.len(), rows[0].len(), rows)
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let db = codes_of(&[vec![true, true], vec![true, true], vec![true, true]]);
        let q = codes_of(&[vec![false, false]]);
        let y = rank_database(&q, 0, &db, &[1.0, 1.0]).unwrap();
        assert_eq!(y.order(), &[0, 1, 2]);
    }

    #[test]
    fn ranking_orders_by_distance() {
        let db = codes_of(&[vec![true, true, true], vec![true, false, false]]);
        let q = codes_of(&[vec![false, false, false]]);
        let y = rank_database(&q, 0, &db, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(y.order(), &[1, 0]);
    }

    #[test]
    fn ranking_is_equivariant_to_database_permutation() {
        let db = codes_of(&[
            vec![true, false, true],
            vec![false, false, false],
            vec![true, true, true],
        ]);
        let permuted = codes_of(&[
            vec![false, false, false],
            vec![true, true, true],
            vec![true, false, true],
        ]);
        let q = codes_of(&[vec![true, false, false]]);
        let w = [0.9, 0.4, 1.3];
        let a = rank_database(&q, 0, &db, &w).unwrap();
        let b = rank_database(&q, 0, &permuted, &w).unwrap();
        // permuted[new] = db[perm[new]]: 0 -> 1, 1 -> 2, 2 -> 0.
        let perm = [1u32, 2, 0];
        let mapped: Vec<u32> = b.order().iter().map(|&j| perm[j as usize]).collect();
        assert_eq!(a.order(), mapped.as_slice());
    }

    fn perfect_setup() -> (Vec<Interleaving>, Vec<QueryNeighborhood>) {
        // 4-row database; two queries whose relevant rows rank first.
        let gts = vec![
            QueryNeighborhood::new(100, vec![0, 1], vec![2, 3]),
            QueryNeighborhood::new(101, vec![2, 3], vec![0, 1]),
        ];
        let rankings = vec![
            Interleaving::new(vec![0, 1, 2, 3]),
            Interleaving::new(vec![2, 3, 0, 1]),
        ];
        (rankings, gts)
    }

    #[test]
    fn perfect_rankings_score_one_everywhere() {
        let (rankings, gts) = perfect_setup();
        let r = evaluate(&rankings, &gts, 2, 8, 42).unwrap();
        assert_eq!(r.mean_ndcg_at_k, 1.0);
        assert_eq!(r.mean_precision_at_k, 1.0);
        assert_eq!(r.mean_average_precision, 1.0);
        assert_eq!(r.mean_auc, 1.0);
        assert_eq!(r.evaluated_queries, 2);
        assert_eq!(r.skipped_queries, 0);
        assert_eq!((r.bits, r.k, r.seed), (8, 2, 42));
    }

    #[test]
    fn means_are_arithmetic_means_of_per_query_values() {
        let gts = vec![
            QueryNeighborhood::new(100, vec![0, 2], vec![1, 3]),
            QueryNeighborhood::new(101, vec![1], vec![0, 2, 3]),
        ];
        let rankings = vec![
            Interleaving::new(vec![1, 0, 2, 3]),
            Interleaving::new(vec![0, 1, 2, 3]),
        ];
        let r = evaluate(&rankings, &gts, 2, 4, 0).unwrap();
        let mean: f64 = r.per_query.iter().map(|q| q.auc).sum::<f64>() / 2.0;
        assert!((r.mean_auc - mean).abs() < 1e-12);
    }

    #[test]
    fn pr_curve_hand_case() {
        // Single query, |P| = 2 of 4, ranking [p, n, p, n].
        let gts = vec![QueryNeighborhood::new(100, vec![0, 2], vec![1, 3])];
        let rankings = vec![Interleaving::new(vec![0, 1, 2, 3])];
        let r = evaluate(&rankings, &gts, 2, 4, 0).unwrap();
        let expect = [(1.0, 0.5), (0.5, 0.5), (2.0 / 3.0, 1.0), (0.5, 1.0)];
        assert_eq!(r.pr_curve.len(), 4);
        for (p, (ep, er)) in r.pr_curve.iter().zip(expect) {
            assert!((p.precision - ep).abs() < 1e-12);
            assert!((p.recall - er).abs() < 1e-12);
        }
        // Precision at full recall is |P| / n.
        assert!((r.pr_curve[3].precision - 0.5).abs() < 1e-12);
    }

    #[test]
    fn queries_without_both_sides_are_skipped_and_counted() {
        let gts = vec![
            QueryNeighborhood::new(100, vec![0, 1], vec![2, 3]),
            QueryNeighborhood::new(101, vec![], vec![0, 1, 2, 3]),
        ];
        let rankings = vec![
            Interleaving::new(vec![0, 1, 2, 3]),
            Interleaving::new(vec![0, 1, 2, 3]),
        ];
        let r = evaluate(&rankings, &gts, 2, 4, 0).unwrap();
        assert_eq!(r.evaluated_queries, 1);
        assert_eq!(r.skipped_queries, 1);
    }

    #[test]
    fn lsh_baseline_shape_and_determinism() {
        let a = lsh_baseline(5, 12, 9).unwrap();
        let b = lsh_baseline(5, 12, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weights, vec![1.0; 12]);
        assert!(a.planes.iter().all(|p| p.b == 0.0 && p.dims() == 5));
        assert_ne!(a.planes[0].v, a.planes[1].v);
    }

    #[test]
    fn trained_model_beats_baseline_on_two_clusters() {
        use crate::learner::tests::two_cluster_instance;
        use crate::learner::{train_structhash, TrainConfig};
        use crate::measures::MeasureSpec;

        let (data, queries) = two_cluster_instance();
        let spec = MeasureSpec::ndcg(10);
        let out = train_structhash(&data, &queries, &spec, 8, &TrainConfig::default()).unwrap();
        let gts: Vec<QueryNeighborhood> = queries.iter().map(|q| q.gt.clone()).collect();

        let run = |model: &HashModel| -> f64 {
            let codes = encode(model, &data).unwrap();
            let rankings: Vec<Interleaving> = (0..data.rows())
                .map(|q| {
                    // Rank the other rows only, so the query never competes.
                    let mut order: Vec<(f64, u32)> = (0..data.rows())
                        .filter(|&j| j != q)
                        .map(|j| (codes.weighted_hamming(&model.weights, q, j), j as u32))
                        .collect();
                    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                    Interleaving::new(order.into_iter().map(|(_, j)| j).collect())
                })
                .collect();
            evaluate(&rankings, &gts, 10, model.bits(), 0).unwrap().mean_ndcg_at_k
        };

        let trained = run(&out.model);
        let baseline = run(&lsh_baseline(data.dims(), 8, 123).unwrap());
        assert!(trained >= 0.95, "training-set ndcg@10 = {trained}");
        assert!(trained >= baseline, "trained {trained} < baseline {baseline}");
    }

    proptest! {
        #[test]
        fn weighted_hamming_is_a_metric(
            a in proptest::collection::vec(any::<bool>(), 64),
            b in proptest::collection::vec(any::<bool>(), 64),
            c in proptest::collection::vec(any::<bool>(), 64),
            w in proptest::collection::vec(0.0f64..3.0, 64),
        ) {
            let m = codes_of(&[a, b, c]);
            let d = |i: usize, j: usize| m.weighted_hamming(&w, i, j);
            prop_assert_eq!(d(0, 0), 0.0);
            prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-12);
            prop_assert!(d(0, 1) >= 0.0);
            prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9);
        }
    }
}
