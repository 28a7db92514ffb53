//! Ranking score functions (AUC, Precision-at-K, NDCG, mAP) over an
//! interleaving of one query's candidates, and the label loss 1 - score.

use std::collections::HashMap;

use crate::data::QueryNeighborhood;
use crate::error::{Error, Result};

/// A ranking outcome: a permutation of a query's candidates (relevant union
/// irrelevant), positions 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaving {
    order: Vec<u32>,
    pos: HashMap<u32, usize>,
}

impl Interleaving {
    pub fn new(order: Vec<u32>) -> Self {
        let pos = order.iter().enumerate().map(|(i, &id)| (id, i + 1)).collect();
        Interleaving { order, pos }
    }

    /// The ground-truth-consistent ranking: all relevant before all
    /// irrelevant, each side in ascending index order.
    pub fn ideal(gt: &QueryNeighborhood) -> Self {
        let mut order = gt.relevant().to_vec();
        order.extend_from_slice(gt.irrelevant());
        Self::new(order)
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// 1-based position of an item, if present.
    pub fn position(&self, id: u32) -> Option<usize> {
        self.pos.get(&id).copied()
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.order.iter().rev().copied().collect())
    }

    /// True when every relevant item precedes every irrelevant item.
    pub fn is_ground_truth_consistent(&self, gt: &QueryNeighborhood) -> bool {
        let mut seen_irrelevant = false;
        for &id in &self.order {
            if gt.is_relevant(id) {
                if seen_irrelevant {
                    return false;
                }
            } else {
                seen_irrelevant = true;
            }
        }
        true
    }
}

/// Which ranking measure drives the loss, with its cutoff where one applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    Auc,
    PrecisionAtK,
    Ndcg,
    MeanAveragePrecision,
}

/// NDCG normalizer: `Ideal` sums gains over min(K, |relevant|) positions so
/// the ideal ranking scores exactly 1; `FixedK` sums over all K positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NdcgNormalizer {
    #[default]
    Ideal,
    FixedK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    pub k: usize,
    pub ndcg_normalizer: NdcgNormalizer,
}

impl MeasureSpec {
    pub fn auc() -> Self {
        MeasureSpec { kind: MeasureKind::Auc, k: 1, ndcg_normalizer: NdcgNormalizer::Ideal }
    }

    pub fn precision_at(k: usize) -> Self {
        MeasureSpec { kind: MeasureKind::PrecisionAtK, k, ndcg_normalizer: NdcgNormalizer::Ideal }
    }

    pub fn ndcg(k: usize) -> Self {
        MeasureSpec { kind: MeasureKind::Ndcg, k, ndcg_normalizer: NdcgNormalizer::Ideal }
    }

    pub fn ndcg_fixed_k(k: usize) -> Self {
        MeasureSpec { kind: MeasureKind::Ndcg, k, ndcg_normalizer: NdcgNormalizer::FixedK }
    }

    pub fn mean_average_precision() -> Self {
        MeasureSpec { kind: MeasureKind::MeanAveragePrecision, k: 1, ndcg_normalizer: NdcgNormalizer::Ideal }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            MeasureKind::PrecisionAtK | MeasureKind::Ndcg if self.k < 1 => {
                Err(Error::config("cutoff K must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn score(&self, y: &Interleaving, gt: &QueryNeighborhood) -> Result<f64> {
        match self.kind {
            MeasureKind::Auc => score_auc(y, gt),
            MeasureKind::PrecisionAtK => score_precision_at_k(y, gt, self.k),
            MeasureKind::Ndcg => score_ndcg(y, gt, self.k, self.ndcg_normalizer),
            MeasureKind::MeanAveragePrecision => score_map(y, gt),
        }
    }
}

fn require_relevant(gt: &QueryNeighborhood) -> Result<()> {
    if gt.relevant().is_empty() {
        return Err(Error::UndefinedMeasure("no relevant neighbors".into()));
    }
    Ok(())
}

/// Proportion of correctly ordered (relevant, irrelevant) pairs.
pub fn score_auc(y: &Interleaving, gt: &QueryNeighborhood) -> Result<f64> {
    require_relevant(gt)?;
    if gt.irrelevant().is_empty() {
        return Err(Error::UndefinedMeasure("no irrelevant neighbors".into()));
    }
    // One pass: each relevant item is correctly ordered against every
    // irrelevant item that comes after it.
    let total_irrelevant = gt.irrelevant().len();
    let mut irrelevant_seen = 0usize;
    let mut correct = 0usize;
    for &id in y.order() {
        if gt.is_relevant(id) {
            correct += total_irrelevant - irrelevant_seen;
        } else {
            irrelevant_seen += 1;
        }
    }
    Ok(correct as f64 / (gt.relevant().len() * total_irrelevant) as f64)
}

/// Fraction of the top K positions holding relevant items.
pub fn score_precision_at_k(y: &Interleaving, gt: &QueryNeighborhood, k: usize) -> Result<f64> {
    require_relevant(gt)?;
    if k < 1 || k > y.len() {
        return Err(Error::config(format!("K={k} out of range for a list of {}", y.len())));
    }
    let hits = y.order()[..k].iter().filter(|&&id| gt.is_relevant(id)).count();
    Ok(hits as f64 / k as f64)
}

/// Position gain: 1 at position 1, 1/log2(i) up to K, 0 beyond K.
pub fn ndcg_gain(i: usize, k: usize) -> f64 {
    debug_assert!(i >= 1);
    if i > k {
        0.0
    } else if i == 1 {
        1.0
    } else {
        1.0 / (i as f64).log2()
    }
}

/// Denominator of the NDCG score for the given cutoff, relevant count, and
/// normalizer mode.
pub fn ndcg_normalizer_value(k: usize, relevant: usize, mode: NdcgNormalizer) -> f64 {
    let k_eff = match mode {
        NdcgNormalizer::Ideal => k.min(relevant),
        NdcgNormalizer::FixedK => k,
    };
    (1..=k_eff).map(|i| ndcg_gain(i, k)).sum()
}

/// Discounted gain of relevant items in the top K, normalized per `mode`.
pub fn score_ndcg(
    y: &Interleaving,
    gt: &QueryNeighborhood,
    k: usize,
    mode: NdcgNormalizer,
) -> Result<f64> {
    require_relevant(gt)?;
    if k < 1 {
        return Err(Error::config("K must be at least 1"));
    }
    let gain: f64 = y
        .order()
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &id)| gt.is_relevant(id))
        .map(|(i0, _)| ndcg_gain(i0 + 1, k))
        .sum();
    Ok(gain / ndcg_normalizer_value(k, gt.relevant().len(), mode))
}

/// Mean of precision-at-i over the positions i holding relevant items,
/// divided by the total relevant count.
pub fn score_map(y: &Interleaving, gt: &QueryNeighborhood) -> Result<f64> {
    require_relevant(gt)?;
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i0, &id) in y.order().iter().enumerate() {
        if gt.is_relevant(id) {
            hits += 1;
            total += hits as f64 / (i0 + 1) as f64;
        }
    }
    Ok(total / gt.relevant().len() as f64)
}

/// Label loss between the true ranking and a prediction: 1 - score(y).
pub fn label_loss(
    spec: &MeasureSpec,
    y_true: &Interleaving,
    y: &Interleaving,
    gt: &QueryNeighborhood,
) -> Result<f64> {
    debug_assert!(y_true.is_ground_truth_consistent(gt));
    Ok(1.0 - spec.score(y, gt)?)
}
