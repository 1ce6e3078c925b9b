//! Per-user train/validation/test splitting of the interaction relation.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::HinGraph;
use crate::{Error, Result};

/// Users with fewer interactions than this keep everything in train.
pub const MIN_SPLITTABLE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Validation,
    Test,
}

impl Fold {
    /// The held-out fold whose items are excluded when ranking for `self`.
    pub fn other_holdout(self) -> Option<Fold> {
        match self {
            Fold::Validation => Some(Fold::Test),
            Fold::Test => Some(Fold::Validation),
            Fold::Train => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidArgument(format!("split ratios must be positive: {all:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split ratios must sum to 1: {all:?}")));
        }
        Ok(())
    }

    /// Fold sizes for `n` items: held-out folds are floored, train takes the rest.
    pub fn allocate(&self, n: usize) -> (usize, usize, usize) {
        if n < MIN_SPLITTABLE {
            return (n, 0, 0);
        }
        // Guard against representation error, e.g. 10 * 0.2 landing just under 2.
        let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let val = floor(self.validation);
        let test = floor(self.test);
        (n - val - test, val, test)
    }
}

/// Normalized label vector `x̃_u`: uniform mass over the user's train items.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    pub user: usize,
    pub items: Vec<usize>,
}

impl LabelVector {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Mass placed on each labeled item.
    pub fn weight(&self) -> f64 {
        if self.items.is_empty() {
            0.0
        } else {
            1.0 / self.items.len() as f64
        }
    }

    /// Binary indicator `x_u` over `num_items`.
    pub fn indicator(&self, num_items: usize) -> Vec<f64> {
        let mut x = vec![0.0; num_items];
        for &i in &self.items {
            x[i] = 1.0;
        }
        x
    }

    pub fn normalized(&self, num_items: usize) -> Vec<f64> {
        let w = self.weight();
        let mut x = vec![0.0; num_items];
        for &i in &self.items {
            x[i] = w;
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionData {
    num_items: usize,
    clicks: Vec<Vec<usize>>,
    train: Vec<Vec<usize>>,
    validation: Vec<Vec<usize>>,
    test: Vec<Vec<usize>>,
}

/// Splits every user's clicks with one seeded shuffle per user, in user order.
pub fn split_interactions(graph: &HinGraph, ratios: SplitRatios, seed: u64) -> Result<InteractionData> {
    ratios.validate()?;
    let clicks = graph.user_items();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(clicks.len());
    let mut validation = Vec::with_capacity(clicks.len());
    let mut test = Vec::with_capacity(clicks.len());
    for items in &clicks {
        let mut order = items.clone();
        order.shuffle(&mut rng);
        let (n_train, n_val, _) = ratios.allocate(order.len());
        let mut tr = order[..n_train].to_vec();
        let mut va = order[n_train..n_train + n_val].to_vec();
        let mut te = order[n_train + n_val..].to_vec();
        tr.sort_unstable();
        va.sort_unstable();
        te.sort_unstable();
        train.push(tr);
        validation.push(va);
        test.push(te);
    }
    Ok(InteractionData {
        num_items: graph.num_items(),
        clicks,
        train,
        validation,
        test,
    })
}

impl InteractionData {
    /// Assembles folds directly; every fold must be sorted and disjoint.
    pub fn from_folds(
        num_items: usize,
        train: Vec<Vec<usize>>,
        validation: Vec<Vec<usize>>,
        test: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if train.len() != validation.len() || train.len() != test.len() {
            return Err(Error::InvalidArgument("fold user counts differ".into()));
        }
        let mut clicks = Vec::with_capacity(train.len());
        for u in 0..train.len() {
            let mut all: Vec<usize> = train[u].iter().chain(&validation[u]).chain(&test[u]).copied().collect();
            if all.iter().any(|&i| i >= num_items) {
                return Err(Error::InvalidArgument(format!("user {u} has an out-of-range item")));
            }
            all.sort_unstable();
            let before = all.len();
            all.dedup();
            if all.len() != before {
                return Err(Error::InvalidArgument(format!("user {u} has overlapping folds")));
            }
            clicks.push(all);
        }
        let sorted = |v: Vec<Vec<usize>>| {
            v.into_iter()
                .map(|mut x| {
                    x.sort_unstable();
                    x
                })
                .collect()
        };
        Ok(InteractionData {
            num_items,
            clicks,
            train: sorted(train),
            validation: sorted(validation),
            test: sorted(test),
        })
    }

    pub fn num_users(&self) -> usize {
        self.clicks.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn clicks(&self, user: usize) -> &[usize] {
        &self.clicks[user]
    }

    pub fn fold(&self, fold: Fold, user: usize) -> &[usize] {
        match fold {
            Fold::Train => &self.train[user],
            Fold::Validation => &self.validation[user],
            Fold::Test => &self.test[user],
        }
    }

    pub fn train(&self, user: usize) -> &[usize] {
        &self.train[user]
    }

    pub fn label(&self, user: usize) -> LabelVector {
        LabelVector {
            user,
            items: self.train[user].clone(),
        }
    }

    /// Label vector of a held-out fold, used for validation losses.
    pub fn fold_label(&self, fold: Fold, user: usize) -> LabelVector {
        LabelVector {
            user,
            items: self.fold(fold, user).to_vec(),
        }
    }

    pub fn train_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.train.iter().enumerate().flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
    }

    pub fn num_train(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    /// The graph rebuilt with train interactions only.
    pub fn train_graph(&self, graph: &HinGraph) -> HinGraph {
        graph.with_interaction_edges(self.train_edges())
    }

    /// Keeps a seeded `fraction` of each user's train items (at least one when
    /// the user had any); held-out folds are untouched. Subsamples taken with
    /// the same seed are nested across fractions.
    pub fn subsample_train(&self, fraction: f64, seed: u64) -> Result<InteractionData> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("train fraction must be in (0, 1], got {fraction}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = self
            .train
            .iter()
            .map(|items| {
                let mut order = items.clone();
                order.shuffle(&mut rng);
                let keep = ((items.len() as f64 * fraction + 1e-9).floor() as usize).max(1).min(items.len());
                let mut kept = order[..keep].to_vec();
                kept.sort_unstable();
                kept
            })
            .collect();
        Ok(InteractionData {
            num_items: self.num_items,
            clicks: self.clicks.clone(),
            train,
            validation: self.validation.clone(),
            test: self.test.clone(),
        })
    }

    pub fn to_manifest(&self, graph: &HinGraph, seed: u64, ratios: SplitRatios) -> SplitManifest {
        let items = graph.items();
        let ids = |v: &[usize]| v.iter().map(|&i| items.id_of(i).to_owned()).collect();
        SplitManifest {
            seed,
            ratios,
            users: (0..self.num_users())
                .map(|u| UserFolds {
                    user: graph.users().id_of(u).to_owned(),
                    train: ids(&self.train[u]),
                    validation: ids(&self.validation[u]),
                    test: ids(&self.test[u]),
                })
                .collect(),
        }
    }

    pub fn from_manifest(manifest: &SplitManifest, graph: &HinGraph) -> Result<Self> {
        let n = graph.num_users();
        let mut train = vec![Vec::new(); n];
        let mut validation = vec![Vec::new(); n];
        let mut test = vec![Vec::new(); n];
        let resolve = |ids: &[String]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    graph
                        .items()
                        .index_of(id)
                        .ok_or_else(|| Error::InvalidArgument(format!("manifest references unknown item `{id}`")))
                })
                .collect()
        };
        for entry in &manifest.users {
            let u = graph
                .users()
                .index_of(&entry.user)
                .ok_or_else(|| Error::InvalidArgument(format!("manifest references unknown user `{}`", entry.user)))?;
            train[u] = resolve(&entry.train)?;
            validation[u] = resolve(&entry.validation)?;
            test[u] = resolve(&entry.test)?;
        }
        Self::from_folds(graph.num_items(), train, validation, test)
    }
}

/// Serialized split, one entry per user in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub users: Vec<UserFolds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserFolds {
    pub user: String,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Items of `user` that must never be ranked when evaluating `fold`.
pub fn excluded_items(data: &InteractionData, user: usize, fold: Fold) -> HashSet<usize> {
    let mut out: HashSet<usize> = data.train(user).iter().copied().collect();
    if let Some(other) = fold.other_holdout() {
        out.extend(data.fold(other, user).iter().copied());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LoadOptions;

    fn graph_with(user_items: &[usize]) -> HinGraph {
        let mut pairs = Vec::new();
        for (u, &n) in user_items.iter().enumerate() {
            for i in 0..n {
                pairs.push((format!("u{u}"), format!("i{i}")));
            }
        }
        HinGraph::from_pairs(&pairs, &[], &LoadOptions::default()).unwrap()
    }

    #[test]
    fn ten_items_split_six_two_two() {
        assert_eq!(SplitRatios::default().allocate(10), (6, 2, 2));
        let g = graph_with(&[10]);
        let d = split_interactions(&g, SplitRatios::default(), 1).unwrap();
        assert_eq!((d.train(0).len(), d.fold(Fold::Validation, 0).len(), d.fold(Fold::Test, 0).len()), (6, 2, 2));
    }

    #[test]
    fn tiny_users_stay_in_train() {
        assert_eq!(SplitRatios::default().allocate(2), (2, 0, 0));
        let g = graph_with(&[2]);
        let d = split_interactions(&g, SplitRatios::default(), 1).unwrap();
        assert_eq!(d.train(0).len(), 2);
    }

    #[test]
    fn remainder_goes_to_train() {
        assert_eq!(SplitRatios::default().allocate(7), (5, 1, 1));
    }

    #[test]
    fn split_is_seeded() {
        let g = graph_with(&[10, 9, 12, 5]);
        let a = split_interactions(&g, SplitRatios::default(), 42).unwrap();
        let b = split_interactions(&g, SplitRatios::default(), 42).unwrap();
        let c = split_interactions(&g, SplitRatios::default(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn folds_partition_clicks() {
        let g = graph_with(&[10, 9, 12, 5, 1]);
        let d = split_interactions(&g, SplitRatios::default(), 3).unwrap();
        for u in 0..d.num_users() {
            let mut all: Vec<usize> = d
                .train(u)
                .iter()
                .chain(d.fold(Fold::Validation, u))
                .chain(d.fold(Fold::Test, u))
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, d.clicks(u));
        }
    }

    #[test]
    fn bad_ratios_rejected() {
        let g = graph_with(&[3]);
        let r = SplitRatios {
            train: 0.5,
            validation: 0.2,
            test: 0.2,
        };
        assert!(split_interactions(&g, r, 0).is_err());
    }

    #[test]
    fn train_graph_hides_holdout() {
        let g = graph_with(&[10, 8]);
        let d = split_interactions(&g, SplitRatios::default(), 5).unwrap();
        let tg = d.train_graph(&g);
        for u in 0..d.num_users() {
            for &i in d.fold(Fold::Validation, u).iter().chain(d.fold(Fold::Test, u)) {
                assert!(tg.interaction_relation().slot_of(u, i).is_none());
            }
        }
        assert_eq!(tg.interaction_relation().len(), d.num_train());
    }

    #[test]
    fn manifest_round_trip() {
        let g = graph_with(&[10, 8, 4]);
        let d = split_interactions(&g, SplitRatios::default(), 5).unwrap();
        let m = d.to_manifest(&g, 5, SplitRatios::default());
        let json = serde_json::to_string(&m).unwrap();
        let back: SplitManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(InteractionData::from_manifest(&back, &g).unwrap(), d);
    }

    #[test]
    fn subsample_is_nested() {
        let g = graph_with(&[20, 15]);
        let d = split_interactions(&g, SplitRatios::default(), 5).unwrap();
        let small = d.subsample_train(0.4, 9).unwrap();
        let big = d.subsample_train(0.8, 9).unwrap();
        for u in 0..2 {
            assert!(small.train(u).iter().all(|i| big.train(u).contains(i)));
            assert_eq!(small.fold(Fold::Test, u), d.fold(Fold::Test, u));
        }
    }

    #[test]
    fn label_normalization() {
        let l = LabelVector { user: 0, items: vec![1, 3] };
        let x = l.normalized(4);
        assert_eq!(x, vec![0.0, 0.5, 0.0, 0.5]);
        assert_eq!(l.indicator(4), vec![0.0, 1.0, 0.0, 1.0]);
    }
}
