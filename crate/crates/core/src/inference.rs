//! Pair features, the joint feature map over rankings, and loss-augmented
//! inference: the per-query most-violated ranking for each measure, plus an
//! exhaustive oracle used to gate the fast paths.
//!
//! For a query i with relevant set P and irrelevant set N, candidates are
//! scored s_u = -d(w, i, u) (negated weighted Hamming distance). The
//! most-violated ranking maximizes loss(y) - w . dpsi(y). For AUC this
//! decomposes per (relevant, irrelevant) pair and is realized by a sort; the
//! position-sensitive measures fix the within-class order to descending s
//! (exchange argument) and optimize the interleaving pattern with a lattice
//! DP over (relevant placed, irrelevant placed) states.

use crate::codes::{weighted_popcount, CodeMatrix};
use crate::data::QueryNeighborhood;
use crate::error::{Error, Result};
use crate::measures::{ndcg_gain, ndcg_normalizer_value, Interleaving, MeasureKind, MeasureSpec};

/// Result of one most-violated search.
#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub ranking: Interleaving,
    /// loss(y) - w . dpsi(y); the true ranking attains 0, so this is >= 0.
    pub objective: f64,
    pub loss: f64,
}

/// Pair feature of Eq.-style sign convention: componentwise -|bit_i - bit_j|,
/// so that w . phi equals the negated weighted Hamming distance.
pub fn phi(codes: &CodeMatrix, i: usize, j: usize) -> Vec<f64> {
    (0..codes.bits())
        .map(|b| if codes.bit(i, b) != codes.bit(j, b) { -1.0 } else { 0.0 })
        .collect()
}

/// Joint feature map of a query and a ranking: the pair-order-signed sum of
/// phi differences over relevant x irrelevant pairs, scaled by 1/(|P||N|).
pub fn psi(
    codes: &CodeMatrix,
    query: usize,
    y: &Interleaving,
    gt: &QueryNeighborhood,
) -> Vec<f64> {
    let bits = codes.bits();
    // Integer-valued accumulation: phi components are 0/-1, so sums stay
    // exact until the final scaling.
    let mut acc = vec![0.0; bits];
    for &j in gt.relevant() {
        for &k in gt.irrelevant() {
            let yjk = if y.position(j).unwrap() < y.position(k).unwrap() { 1.0 } else { -1.0 };
            for b in 0..bits {
                let pj = if codes.bit(query, b) != codes.bit(j as usize, b) { -1.0 } else { 0.0 };
                let pk = if codes.bit(query, b) != codes.bit(k as usize, b) { -1.0 } else { 0.0 };
                acc[b] += yjk * (pj - pk);
            }
        }
    }
    let scale = 1.0 / (gt.relevant().len() * gt.irrelevant().len()) as f64;
    acc.iter_mut().for_each(|v| *v *= scale);
    acc
}

/// Incorrectly ranked pairs: (j, k) in P x N with k placed before j in `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvertedPairs {
    pub pairs: Vec<(u32, u32)>,
}

pub fn inverted_pairs(
    y_true: &Interleaving,
    y: &Interleaving,
    gt: &QueryNeighborhood,
) -> InvertedPairs {
    debug_assert!(y_true.is_ground_truth_consistent(gt));
    let mut pairs = Vec::new();
    let mut irr_seen: Vec<u32> = Vec::new();
    for &id in y.order() {
        if gt.is_relevant(id) {
            pairs.extend(irr_seen.iter().map(|&k| (id, k)));
        } else {
            irr_seen.push(id);
        }
    }
    InvertedPairs { pairs }
}

/// dpsi(y) = psi(x_i, y_i) - psi(x_i, y), computed in its simplified form:
/// (2/(|P||N|)) sum over inverted pairs of (|x_i - x_k| - |x_i - x_j|).
pub fn delta_psi(
    codes: &CodeMatrix,
    query: usize,
    y: &Interleaving,
    gt: &QueryNeighborhood,
) -> Vec<f64> {
    delta_psi_bits(codes, query, y.order(), gt, 0..codes.bits())
}

/// As `delta_psi`, restricted to a bit range: the training driver uses this
/// to extend retained cuts with the exact coefficients of freshly added
/// bits. Output index 0 corresponds to the start of the range.
pub fn delta_psi_bits(
    codes: &CodeMatrix,
    query: usize,
    order: &[u32],
    gt: &QueryNeighborhood,
    bits: std::ops::Range<usize>,
) -> Vec<f64> {
    // Group per candidate: an irrelevant k appearing in c_k inverted pairs
    // contributes +c_k |x_i - x_k|, a relevant j contributes -c_j |x_i - x_j|.
    let mut acc = vec![0.0; bits.len()];
    let mut irr_seen: Vec<u32> = Vec::new();
    let mut irr_counts: Vec<f64> = Vec::new();
    let add = |id: u32, count: f64, acc: &mut Vec<f64>| {
        if count == 0.0 {
            return;
        }
        for (slot, b) in bits.clone().enumerate() {
            if codes.bit(query, b) != codes.bit(id as usize, b) {
                acc[slot] += count;
            }
        }
    };
    for &id in order {
        if gt.is_relevant(id) {
            add(id, -(irr_seen.len() as f64), &mut acc);
            for c in irr_counts.iter_mut() {
                *c += 1.0;
            }
        } else {
            irr_seen.push(id);
            irr_counts.push(0.0);
        }
    }
    for (&k, &c) in irr_seen.iter().zip(&irr_counts) {
        add(k, c, &mut acc);
    }
    let scale = 2.0 / (gt.relevant().len() * gt.irrelevant().len()) as f64;
    acc.iter_mut().for_each(|v| *v *= scale);
    acc
}

/// Per-query cache of the packed XOR between the query's code and each
/// candidate's code, keyed by the bit count it was built against. Rebuilt
/// whenever a bit is added; read-only (and thread-safe) in between.
#[derive(Debug, Clone)]
pub struct ScoreCache {
    bits: usize,
    words_per_row: usize,
    ids: Vec<u32>,
    is_rel: Vec<bool>,
    xors: Vec<u64>,
}

impl ScoreCache {
    pub fn build(codes: &CodeMatrix, query: usize, gt: &QueryNeighborhood) -> Self {
        let mut ids: Vec<u32> = gt.relevant().iter().chain(gt.irrelevant()).copied().collect();
        ids.sort_unstable();
        let is_rel: Vec<bool> = ids.iter().map(|&id| gt.is_relevant(id)).collect();
        let words_per_row = codes.row_words(0).len();
        let mut xors = Vec::with_capacity(ids.len() * words_per_row);
        let qwords = codes.row_words(query);
        for &id in &ids {
            xors.extend(codes.row_words(id as usize).iter().zip(qwords).map(|(a, b)| a ^ b));
        }
        ScoreCache { bits: codes.bits(), words_per_row, ids, is_rel, xors }
    }

    pub fn is_current(&self, codes: &CodeMatrix) -> bool {
        self.bits == codes.bits()
    }

    fn scores(&self, w: &[f64]) -> Vec<f64> {
        (0..self.ids.len())
            .map(|c| {
                let words = &self.xors[c * self.words_per_row..(c + 1) * self.words_per_row];
                -weighted_popcount(words, w)
            })
            .collect()
    }
}

/// Candidate ids with class membership and scores, sorted by id.
struct Candidates {
    ids: Vec<u32>,
    is_rel: Vec<bool>,
    s: Vec<f64>,
    relevant: usize,
    irrelevant: usize,
}

impl Candidates {
    fn from_codes(codes: &CodeMatrix, query: usize, w: &[f64], gt: &QueryNeighborhood) -> Result<Self> {
        if w.len() != codes.bits() {
            return Err(Error::DimMismatch(format!(
                "w has {} components, codes have {} bits",
                w.len(),
                codes.bits()
            )));
        }
        let mut ids: Vec<u32> = gt.relevant().iter().chain(gt.irrelevant()).copied().collect();
        ids.sort_unstable();
        let is_rel: Vec<bool> = ids.iter().map(|&id| gt.is_relevant(id)).collect();
        let s: Vec<f64> =
            ids.iter().map(|&id| -codes.weighted_hamming(w, query, id as usize)).collect();
        Ok(Candidates {
            ids,
            is_rel,
            s,
            relevant: gt.relevant().len(),
            irrelevant: gt.irrelevant().len(),
        })
    }

    fn from_cache(cache: &ScoreCache, w: &[f64]) -> Result<Self> {
        if w.len() != cache.bits {
            return Err(Error::DimMismatch(format!(
                "w has {} components, cache was built for {} bits",
                w.len(),
                cache.bits
            )));
        }
        let relevant = cache.is_rel.iter().filter(|r| **r).count();
        Ok(Candidates {
            ids: cache.ids.clone(),
            is_rel: cache.is_rel.clone(),
            s: cache.scores(w),
            relevant,
            irrelevant: cache.ids.len() - relevant,
        })
    }

    fn lookup(&self, id: u32) -> (bool, f64) {
        let i = self.ids.binary_search(&id).expect("candidate id");
        (self.is_rel[i], self.s[i])
    }

    /// One class's (id, score) pairs sorted by descending score, ascending id.
    fn sorted_class(&self, relevant: bool) -> Vec<(u32, f64)> {
        let mut v: Vec<(u32, f64)> = self
            .ids
            .iter()
            .zip(&self.is_rel)
            .zip(&self.s)
            .filter(|((_, r), _)| **r == relevant)
            .map(|((id, _), s)| (*id, *s))
            .collect();
        v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        v
    }
}

/// Loss, objective, and inversion count of one ranking in a single pass.
fn objective_of_order(
    spec: &MeasureSpec,
    order: &[u32],
    cands: &Candidates,
) -> Result<(f64, f64, u64)> {
    let p = cands.relevant;
    let n = cands.irrelevant;
    let pn = (p * n) as f64;
    let k = spec.k;
    if matches!(spec.kind, MeasureKind::PrecisionAtK) && (k < 1 || k > order.len()) {
        return Err(Error::config(format!("K={k} out of range for a list of {}", order.len())));
    }

    let mut irr_seen = 0usize;
    let mut sum_s_irr_seen = 0.0;
    let mut hits = 0usize;
    let mut auc_correct = 0u64;
    let mut pak_hits = 0usize;
    let mut ndcg_sum = 0.0;
    let mut map_sum = 0.0;
    let mut pair_sum = 0.0;
    let mut inversions = 0u64;

    for (i0, &id) in order.iter().enumerate() {
        let pos = i0 + 1;
        let (rel, s) = cands.lookup(id);
        if rel {
            hits += 1;
            auc_correct += (n - irr_seen) as u64;
            if pos <= k {
                pak_hits += 1;
                ndcg_sum += ndcg_gain(pos, k);
            }
            map_sum += hits as f64 / pos as f64;
            pair_sum += irr_seen as f64 * s - sum_s_irr_seen;
            inversions += irr_seen as u64;
        } else {
            irr_seen += 1;
            sum_s_irr_seen += s;
        }
    }

    let score = match spec.kind {
        MeasureKind::Auc => auc_correct as f64 / pn,
        MeasureKind::PrecisionAtK => pak_hits as f64 / k as f64,
        MeasureKind::Ndcg => ndcg_sum / ndcg_normalizer_value(k, p, spec.ndcg_normalizer),
        MeasureKind::MeanAveragePrecision => map_sum / p as f64,
    };
    let loss = 1.0 - score;
    let objective = loss - (2.0 / pn) * pair_sum;
    Ok((loss, objective, inversions))
}

/// AUC most-violated ranking: invert pair (j, k) exactly when
/// 1 - 2(s_j - s_k) > 0, realized by merging the two class lists on the
/// adjusted score (s - 1/2 for relevant items), relevant first on ties.
fn most_violated_auc(cands: &Candidates) -> Vec<u32> {
    let rel = cands.sorted_class(true);
    let irr = cands.sorted_class(false);
    let mut order = Vec::with_capacity(rel.len() + irr.len());
    let (mut a, mut b) = (0, 0);
    while a < rel.len() || b < irr.len() {
        let take_rel = match (rel.get(a), irr.get(b)) {
            (Some(&(_, sj)), Some(&(_, sk))) => sj - 0.5 >= sk,
            (Some(_), None) => true,
            _ => false,
        };
        if take_rel {
            order.push(rel[a].0);
            a += 1;
        } else {
            order.push(irr[b].0);
            b += 1;
        }
    }
    order
}

#[derive(Clone, Copy, PartialEq)]
struct DpVal {
    obj: f64,
    inv: u64,
}

fn better(a: DpVal, b: DpVal) -> bool {
    a.obj > b.obj || (a.obj == b.obj && a.inv < b.inv)
}

/// Lattice DP over interleaving patterns with both classes fixed to
/// descending-score order. Maximizes the objective, then minimizes the
/// inversion count, then prefers the lexicographically smallest pattern
/// (relevant-first) during reconstruction.
fn most_violated_dp(spec: &MeasureSpec, cands: &Candidates) -> Result<Vec<u32>> {
    let rel = cands.sorted_class(true);
    let irr = cands.sorted_class(false);
    let (p, n) = (rel.len(), irr.len());
    let pn = (p * n) as f64;
    let k = spec.k;
    if matches!(spec.kind, MeasureKind::PrecisionAtK) && (k < 1 || k > p + n) {
        return Err(Error::config(format!("K={k} out of range for a list of {}", p + n)));
    }
    let ndcg_z = ndcg_normalizer_value(k, p, spec.ndcg_normalizer);

    // prefix_irr[b] = sum of the first b irrelevant scores.
    let mut prefix_irr = vec![0.0; n + 1];
    for (b, &(_, s)) in irr.iter().enumerate() {
        prefix_irr[b + 1] = prefix_irr[b] + s;
    }

    // Gain of placing relevant item a (0-based) after b irrelevant items.
    let gain = |a: usize, b: usize| -> f64 {
        let pos = a + b + 1;
        let score_inc = match spec.kind {
            MeasureKind::Auc => (n - b) as f64 / pn,
            MeasureKind::PrecisionAtK => {
                if pos <= k {
                    1.0 / k as f64
                } else {
                    0.0
                }
            }
            MeasureKind::Ndcg => ndcg_gain(pos, k) / ndcg_z,
            MeasureKind::MeanAveragePrecision => (a + 1) as f64 / (pos * p) as f64,
        };
        -score_inc - (2.0 / pn) * (b as f64 * rel[a].1 - prefix_irr[b])
    };

    // Suffix values: v[a][b] = best achievable from the state with a relevant
    // and b irrelevant already placed.
    let width = n + 1;
    let mut v = vec![DpVal { obj: 0.0, inv: 0 }; (p + 1) * width];
    for a in (0..=p).rev() {
        for b in (0..=n).rev() {
            if a == p && b == n {
                continue;
            }
            let mut best: Option<DpVal> = None;
            if a < p {
                let next = v[(a + 1) * width + b];
                let cand = DpVal { obj: gain(a, b) + next.obj, inv: b as u64 + next.inv };
                best = Some(cand);
            }
            if b < n {
                let cand = v[a * width + b + 1];
                if best.is_none_or(|cur| better(cand, cur)) {
                    best = Some(cand);
                }
            }
            v[a * width + b] = best.unwrap();
        }
    }

    // Reconstruct, preferring the relevant step on exact ties.
    let mut order = Vec::with_capacity(p + n);
    let (mut a, mut b) = (0, 0);
    while a < p || b < n {
        let take_rel = if a == p {
            false
        } else if b == n {
            true
        } else {
            let next = v[(a + 1) * width + b];
            let r = DpVal { obj: gain(a, b) + next.obj, inv: b as u64 + next.inv };
            let i = v[a * width + b + 1];
            !better(i, r)
        };
        if take_rel {
            order.push(rel[a].0);
            a += 1;
        } else {
            order.push(irr[b].0);
            b += 1;
        }
    }
    Ok(order)
}

fn infer_from_candidates(spec: &MeasureSpec, cands: &Candidates) -> Result<InferenceResult> {
    if cands.relevant == 0 || cands.irrelevant == 0 {
        return Err(Error::UndefinedMeasure(
            "inference needs both relevant and irrelevant candidates".into(),
        ));
    }
    let order = match spec.kind {
        MeasureKind::Auc => most_violated_auc(cands),
        _ => most_violated_dp(spec, cands)?,
    };
    let (loss, objective, _) = objective_of_order(spec, &order, cands)?;
    Ok(InferenceResult { ranking: Interleaving::new(order), objective, loss })
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::config("bit weights must be non-negative"));
    }
    Ok(())
}

/// Most-violated ranking of one query under the given measure, exact up to
/// the deterministic tie rules.
pub fn infer_most_violated(
    spec: &MeasureSpec,
    query: usize,
    w: &[f64],
    codes: &CodeMatrix,
    gt: &QueryNeighborhood,
) -> Result<InferenceResult> {
    check_weights(w)?;
    let cands = Candidates::from_codes(codes, query, w, gt)?;
    infer_from_candidates(spec, &cands)
}

/// Cache-backed variant used by the training driver across cutting-plane
/// iterations.
pub fn infer_most_violated_cached(
    spec: &MeasureSpec,
    cache: &ScoreCache,
    w: &[f64],
) -> Result<InferenceResult> {
    check_weights(w)?;
    let cands = Candidates::from_cache(cache, w)?;
    infer_from_candidates(spec, &cands)
}

/// Exhaustive oracle: enumerates every permutation of the candidate list and
/// returns a maximizer of the same objective. Guarded to at most 8 candidates.
pub fn brute_force_most_violated(
    spec: &MeasureSpec,
    query: usize,
    w: &[f64],
    codes: &CodeMatrix,
    gt: &QueryNeighborhood,
) -> Result<InferenceResult> {
    check_weights(w)?;
    let cands = Candidates::from_codes(codes, query, w, gt)?;
    if cands.ids.len() > 8 {
        return Err(Error::config(format!(
            "brute force limited to 8 candidates, got {}",
            cands.ids.len()
        )));
    }
    if cands.relevant == 0 || cands.irrelevant == 0 {
        return Err(Error::UndefinedMeasure(
            "inference needs both relevant and irrelevant candidates".into(),
        ));
    }

    let pattern_of = |order: &[u32]| -> Vec<u8> {
        order.iter().map(|&id| if cands.lookup(id).0 { 0 } else { 1 }).collect()
    };

    let mut order: Vec<u32> = cands.ids.clone();
    let mut best: Option<(f64, u64, Vec<u8>, Vec<u32>, f64)> = None;
    let consider = |order: &[u32], best: &mut Option<(f64, u64, Vec<u8>, Vec<u32>, f64)>| {
        let (loss, obj, inv) = objective_of_order(spec, order, &cands).expect("sized K");
        let replace = match best {
            None => true,
            Some((bobj, binv, bpat, _, _)) => {
                obj > *bobj
                    || (obj == *bobj
                        && (inv < *binv || (inv == *binv && pattern_of(order) < *bpat)))
            }
        };
        if replace {
            *best = Some((obj, inv, pattern_of(order), order.to_vec(), loss));
        }
    };

    // Heap's algorithm.
    let m = order.len();
    let mut c = vec![0usize; m];
    consider(&order, &mut best);
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            consider(&order, &mut best);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }

    let (objective, _, _, order, loss) = best.unwrap();
    // K validation above makes the earlier expect safe for P@K.
    Ok(InferenceResult { ranking: Interleaving::new(order), objective, loss })
}
