//! Ranking metrics, model fidelity and the popularity baseline.
//!
//! NDCG uses binary gains with `1 / log2(rank + 1)` discounts; the ideal DCG
//! places `min(K, |relevant|)` hits at the top. Recall divides by
//! `min(K, |relevant|)`, so a perfect top-K always scores one.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::loss::loss_l3;
use crate::split::{excluded_items, Fold, InteractionData};
use crate::{Error, Result};

/// Candidate items for `user` on `fold`, best first. Train items and the other
/// held-out fold are excluded; ties go to the lower item index.
pub fn rank_candidates(scores: &[f64], user: usize, fold: Fold, data: &InteractionData) -> Vec<usize> {
    let excluded = excluded_items(data, user, fold);
    let mut ranked: Vec<usize> = (0..scores.len()).filter(|i| !excluded.contains(i)).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ranked
}

/// 1-based ranks of relevant items within the top `k`.
fn hits<'a>(ranked: &'a [usize], relevant: &'a HashSet<usize>, k: usize) -> impl Iterator<Item = usize> + 'a {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(move |(_, i)| relevant.contains(i))
        .map(|(pos, _)| pos + 1)
}

/// One if any relevant item is in the top `k`.
pub fn hit_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    if hits(ranked, relevant, k).next().is_some() {
        1.0
    } else {
        0.0
    }
}

pub fn recall_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    let denom = k.min(relevant.len());
    if denom == 0 {
        return 0.0;
    }
    hits(ranked, relevant, k).count() as f64 / denom as f64
}

pub fn ndcg_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    let ideal: f64 = (1..=k.min(relevant.len())).map(|r| 1.0 / (r as f64 + 1.0).log2()).sum();
    if ideal == 0.0 {
        return 0.0;
    }
    let dcg: f64 = hits(ranked, relevant, k).map(|r| 1.0 / (r as f64 + 1.0).log2()).sum();
    dcg / ideal
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Embedding,
    Path,
    ItemPop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model: ModelKind,
    pub fold: Fold,
    pub k_list: Vec<usize>,
    /// Mean of every metric over evaluated users, keyed like `ndcg@10`.
    pub metrics: BTreeMap<String, f64>,
    pub users: usize,
    pub per_user: Vec<UserMetrics>,
}

impl EvalResult {
    pub fn get(&self, metric: &str, k: usize) -> Option<f64> {
        self.metrics.get(&format!("{metric}@{k}")).copied()
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.get("ndcg", k).unwrap_or(0.0)
    }
}

/// Evaluates scores produced per user. Users without held-out items on `fold`
/// are skipped.
pub fn evaluate<F>(model: ModelKind, fold: Fold, k_list: &[usize], data: &InteractionData, scores: F) -> EvalResult
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    let per_user: Vec<UserMetrics> = (0..data.num_users())
        .into_par_iter()
        .filter(|&u| !data.fold(fold, u).is_empty())
        .map(|u| {
            let relevant: HashSet<usize> = data.fold(fold, u).iter().copied().collect();
            let ranked = rank_candidates(&scores(u), u, fold, data);
            let mut values = BTreeMap::new();
            for &k in k_list {
                values.insert(format!("hit@{k}"), hit_at_k(&ranked, &relevant, k));
                values.insert(format!("recall@{k}"), recall_at_k(&ranked, &relevant, k));
                values.insert(format!("ndcg@{k}"), ndcg_at_k(&ranked, &relevant, k));
            }
            UserMetrics { user: u, values }
        })
        .collect();

    let mut metrics = BTreeMap::new();
    if !per_user.is_empty() {
        for key in per_user[0].values.keys() {
            let total: f64 = per_user.iter().map(|m| m.values[key]).sum();
            metrics.insert(key.clone(), total / per_user.len() as f64);
        }
    }
    EvalResult {
        model,
        fold,
        k_list: k_list.to_vec(),
        metrics,
        users: per_user.len(),
        per_user,
    }
}

/// Mean `KL(z'_u ‖ z_u)` over the given `(z_u, z'_u)` pairs.
pub fn kl_fidelity(pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(z, zp)| loss_l3(zp, z)).sum::<f64>() / pairs.len() as f64
}

/// Train interaction count per item.
pub fn itempop_baseline(data: &InteractionData) -> Result<Vec<f64>> {
    if data.num_train() == 0 {
        return Err(Error::InvalidArgument("item popularity needs train interactions".into()));
    }
    let mut counts = vec![0.0; data.num_items()];
    for (_, i) in data.train_edges() {
        counts[i] += 1.0;
    }
    Ok(counts)
}
