//! Ranking metrics at a cutoff and split-level evaluation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ListFeatures, Model};
use crate::numeric::Tape;

/// Which probability vector a list is ranked by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Combined,
    BackboneOnly,
    SareOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Combined, Variant::BackboneOnly, Variant::SareOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Combined => "combined",
            Variant::BackboneOnly => "backbone_only",
            Variant::SareOnly => "sare_only",
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub hr: f64,
    pub ap: f64,
    pub ndcg: f64,
}

/// Split means of the per-list metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub hr: f64,
    pub map: f64,
    pub ndcg: f64,
    pub lists: usize,
}

/// Candidate positions by descending probability, ties by ascending item id.
pub fn rank_list(probs: &[f64], item_ids: &[u32]) -> Vec<usize> {
    assert_eq!(probs.len(), item_ids.len(), "one id per probability");
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .total_cmp(&probs[a])
            .then(item_ids[a].cmp(&item_ids[b]))
    });
    order
}

/// HR, AP and NDCG of a ranked 0/1 label sequence with `positives` relevant
/// items in total. A cutoff beyond the list length is clipped.
pub fn metrics_at_k(ranked_labels: &[u8], positives: usize, k: usize) -> Result<RankMetrics> {
    if k == 0 {
        return Err(Error::Config("cutoff k must be at least 1".into()));
    }
    if positives == 0 {
        return Err(Error::SingleClass);
    }
    let k = k.min(ranked_labels.len());
    let ideal = positives.min(k);
    let (mut hits, mut ap, mut dcg) = (0usize, 0.0, 0.0);
    for (r, &rel) in ranked_labels[..k].iter().enumerate() {
        if rel == 1 {
            hits += 1;
            ap += hits as f64 / (r + 1) as f64;
            dcg += 1.0 / libm::log2((r + 2) as f64);
        }
    }
    let idcg: f64 = (0..ideal).map(|r| 1.0 / libm::log2((r + 2) as f64)).sum();
    Ok(RankMetrics {
        hr: if hits > 0 { 1.0 } else { 0.0 },
        ap: ap / ideal as f64,
        ndcg: dcg / idcg,
    })
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if libm::fabs(self.sum) >= libm::fabs(x) {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// The probability vector `variant` ranks by.
pub fn list_probs(model: &Model, tape: &mut Tape, feats: &ListFeatures, variant: Variant) -> Result<Vec<f64>> {
    tape.clear();
    let fwd = model.forward(tape, feats)?;
    let node = match variant {
        Variant::Combined => fwd.output,
        Variant::BackboneOnly => fwd.p_backbone,
        Variant::SareOnly => fwd
            .p_sare
            .ok_or_else(|| Error::Config("sare_only needs a model with the enhancer attached".into()))?,
    };
    Ok(tape.value(node).to_vec())
}

pub fn evaluate_lists(model: &Model, lists: &[ListFeatures], k: usize, variant: Variant) -> Result<Vec<RankMetrics>> {
    let mut tape = Tape::new();
    lists
        .iter()
        .map(|feats| {
            let probs = list_probs(model, &mut tape, feats, variant)?;
            let order = rank_list(&probs, &feats.item_ids);
            let ranked: Vec<u8> = order.iter().map(|&i| feats.labels[i]).collect();
            metrics_at_k(&ranked, feats.positives(), k)
        })
        .collect()
}

pub fn summarize(per_list: &[RankMetrics]) -> Result<MetricSummary> {
    if per_list.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let (mut hr, mut ap, mut ndcg) = (CompensatedSum::default(), CompensatedSum::default(), CompensatedSum::default());
    for m in per_list {
        hr.add(m.hr);
        ap.add(m.ap);
        ndcg.add(m.ndcg);
    }
    let n = per_list.len() as f64;
    Ok(MetricSummary {
        hr: hr.total() / n,
        map: ap.total() / n,
        ndcg: ndcg.total() / n,
        lists: per_list.len(),
    })
}

/// Mean metrics over a split.
pub fn evaluate(model: &Model, lists: &[ListFeatures], k: usize, variant: Variant) -> Result<MetricSummary> {
    if lists.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    summarize(&evaluate_lists(model, lists, k, variant)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn rank_worked_values() {
        assert_eq!(rank_list(&[0.1, 0.7, 0.2], &[5, 6, 7]), vec![1, 2, 0]);
        assert_eq!(rank_list(&[0.25; 4], &[9, 3, 7, 1]), vec![3, 1, 2, 0]);
    }

    #[test]
    fn metrics_worked_values() {
        let m = metrics_at_k(&[1, 0, 1], 2, 3).unwrap();
        assert_eq!(m.hr, 1.0);
        assert!((m.ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        let expected = 1.5 / (1.0 + 1.0 / libm::log2(3.0));
        assert!((m.ndcg - expected).abs() < 1e-12);
        assert!((m.ndcg - 0.9197).abs() < 1e-4);
    }

    #[test]
    fn ideal_and_empty_prefixes() {
        let best = metrics_at_k(&[1, 1, 0, 0], 2, 3).unwrap();
        assert_eq!((best.hr, best.ap, best.ndcg), (1.0, 1.0, 1.0));
        let none = metrics_at_k(&[0, 0, 0, 1, 0], 1, 3).unwrap();
        assert_eq!((none.hr, none.ap, none.ndcg), (0.0, 0.0, 0.0));
    }

    #[test]
    fn cutoff_beyond_list_is_clipped() {
        assert_eq!(metrics_at_k(&[0, 1], 1, 10).unwrap(), metrics_at_k(&[0, 1], 1, 2).unwrap());
        assert!(metrics_at_k(&[0, 1], 1, 0).is_err());
        assert!(metrics_at_k(&[0, 0], 0, 2).is_err());
    }

    #[test]
    fn compensated_sum_survives_cancellation() {
        let mut s = CompensatedSum::default();
        for x in [1e16, 1.0, -1e16] {
            s.add(x);
        }
        assert_eq!(s.total(), 1.0);
    }

    fn oracle(labels: &[u8], k: usize) -> (f64, f64, f64) {
        let pos = labels.iter().filter(|&&l| l == 1).count();
        let top = &labels[..k.min(labels.len())];
        let hr = if top.contains(&1) { 1.0 } else { 0.0 };
        let mut ap = 0.0;
        for r in 0..top.len() {
            if top[r] == 1 {
                let prec = top[..=r].iter().filter(|&&l| l == 1).count() as f64 / (r + 1) as f64;
                ap += prec;
            }
        }
        let norm = pos.min(top.len()) as f64;
        let dcg: f64 = top.iter().enumerate().map(|(r, &l)| l as f64 / libm::log2(r as f64 + 2.0)).sum();
        let mut ideal = labels.to_vec();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal[..top.len()].iter().enumerate().map(|(r, &l)| l as f64 / libm::log2(r as f64 + 2.0)).sum();
        (hr, ap / norm, dcg / idcg)
    }

    proptest! {
        #[test]
        fn rank_is_permutation(probs in proptest::collection::vec(0.0f64..1.0, 2..20)) {
            let ids: Vec<u32> = (0..probs.len() as u32).rev().collect();
            let mut order = rank_list(&probs, &ids);
            for w in order.windows(2) {
                prop_assert!(probs[w[0]] >= probs[w[1]]);
            }
            order.sort_unstable();
            prop_assert_eq!(order, (0..probs.len()).collect::<Vec<_>>());
        }

        #[test]
        fn matches_oracle(labels in proptest::collection::vec(0u8..2, 2..12), k in 1usize..6) {
            prop_assume!(labels.contains(&1));
            let pos = labels.iter().filter(|&&l| l == 1).count();
            let m = metrics_at_k(&labels, pos, k).unwrap();
            let (hr, ap, ndcg) = oracle(&labels, k);
            prop_assert!((m.hr - hr).abs() < 1e-12);
            prop_assert!((m.ap - ap).abs() < 1e-12);
            prop_assert!((m.ndcg - ndcg).abs() < 1e-12);
            prop_assert_eq!(m.ndcg > 0.0, m.hr == 1.0);
        }

        #[test]
        fn monotone_transform_keeps_metrics(probs in proptest::collection::vec(0.01f64..1.0, 3..10)) {
            let ids: Vec<u32> = (0..probs.len() as u32).collect();
            let labels: Vec<u8> = (0..probs.len()).map(|i| (i % 2) as u8).collect();
            let rank = |p: &[f64]| {
                let order = rank_list(p, &ids);
                let ranked: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
                metrics_at_k(&ranked, labels.iter().filter(|&&l| l == 1).count(), 3).unwrap()
            };
            let squashed: Vec<f64> = probs.iter().map(|p| libm::log(*p) * 2.0 + 1.0).collect();
            prop_assert_eq!(rank(&probs), rank(&squashed));
        }
    }
}
