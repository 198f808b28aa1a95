//! All-ranking top-K evaluation with training items masked.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{matmul_nt, Tensor};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, Split};

/// Users scored per dense block.
const USER_BLOCK: usize = 256;

/// Top-`k` item indices by descending score, skipping `masked` (sorted),
/// ties to the smaller index.
pub fn rank_scores(scores: &[f64], masked: &[usize], k: usize) -> Vec<usize> {
    let mut cand: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|(i, _)| masked.binary_search(i).is_err())
        .collect();
    let better = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, better);
        cand.truncate(k);
    }
    cand.sort_unstable_by(better);
    cand.into_iter().map(|(i, _)| i).collect()
}

/// Ranks every item for every user by `users · items^T`.
///
/// `masks[u]` lists (sorted) items excluded for user `u`.
pub fn rank_all(
    users: &Tensor,
    items: &Tensor,
    masks: &[Vec<usize>],
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    if users.cols() != items.cols() {
        return Err(Error::shape("rank_all", users.shape(), items.shape()));
    }
    if masks.len() != users.rows() {
        return Err(Error::Input(format!(
            "{} masks for {} users",
            masks.len(),
            users.rows()
        )));
    }
    let starts: Vec<usize> = (0..users.rows()).step_by(USER_BLOCK).collect();
    let blocks: Result<Vec<Vec<Vec<usize>>>> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + USER_BLOCK).min(users.rows());
            let idx: Vec<usize> = (s..e).collect();
            let scores = matmul_nt(&users.gather_rows(&idx), items)?;
            Ok((s..e)
                .map(|u| rank_scores(scores.row(u - s), &masks[u], k))
                .collect())
        })
        .collect();
    Ok(blocks?.into_iter().flatten().collect())
}

/// `|top-k ∩ relevant| / |relevant|`; `None` when nothing is relevant.
pub fn recall_at_k(topk: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = topk.iter().take(k).filter(|i| relevant.contains(i)).count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG with `1 / log2(rank + 1)` discounts.
pub fn ndcg_at_k(topk: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = topk
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(relevant.len()))
        .map(|r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    Some(dcg / idcg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub ks: Vec<usize>,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    /// Users with at least one relevant item in the split.
    pub users: usize,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("metrics serialise");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Averages per-user metrics over users with relevant items.
pub fn summarize(
    split: &str,
    rankings: &[Vec<usize>],
    relevant: &[Vec<usize>],
    ks: &[usize],
) -> MetricsReport {
    let mut recall = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    let evaluated: Vec<usize> = (0..relevant.len())
        .filter(|&u| !relevant[u].is_empty())
        .collect();
    let n = evaluated.len().max(1) as f64;
    for &k in ks {
        let r: f64 = evaluated
            .iter()
            .filter_map(|&u| recall_at_k(&rankings[u], &relevant[u], k))
            .sum();
        let g: f64 = evaluated
            .iter()
            .filter_map(|&u| ndcg_at_k(&rankings[u], &relevant[u], k))
            .sum();
        recall.insert(k, r / n);
        ndcg.insert(k, g / n);
    }
    MetricsReport {
        split: split.to_string(),
        ks: ks.to_vec(),
        recall,
        ndcg,
        users: evaluated.len(),
    }
}

/// Ranks with training items masked and scores against `split`.
pub fn evaluate_embeddings(
    users: &Tensor,
    items: &Tensor,
    dataset: &Dataset,
    split: Split,
    ks: &[usize],
) -> Result<MetricsReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("cutoffs must be positive".into()));
    }
    let kmax = *ks.iter().max().unwrap();
    let masks = dataset.items_by_user(Split::Train);
    let relevant = dataset.items_by_user(split);
    let rankings = rank_all(users, items, &masks, kmax)?;
    Ok(summarize(split.name(), &rankings, &relevant, ks))
}

/// Expected Recall@K of a uniformly random ranking over unmasked items.
pub fn random_recall(dataset: &Dataset, split: Split, k: usize) -> f64 {
    let masks = dataset.items_by_user(Split::Train);
    let relevant = dataset.items_by_user(split);
    let n = dataset.num_items();
    let vals: Vec<f64> = (0..dataset.num_users())
        .filter(|&u| !relevant[u].is_empty())
        .map(|u| (k as f64 / (n - masks[u].len()) as f64).min(1.0))
        .collect();
    vals.iter().sum::<f64>() / vals.len().max(1) as f64
}
