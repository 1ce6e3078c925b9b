use std::collections::HashSet;

use pathdistill::metrics::{evaluate, hit_at_k, ndcg_at_k, rank_candidates, recall_at_k, ModelKind};
use pathdistill::split::{Fold, InteractionData};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_hit(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    for pos in 0..k.min(ranked.len()) {
        if relevant.contains(&ranked[pos]) {
            return 1.0;
        }
    }
    0.0
}

fn brute_recall(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    let denom = k.min(relevant.len());
    if denom == 0 {
        return 0.0;
    }
    let mut found = 0;
    for pos in 0..k.min(ranked.len()) {
        if relevant.contains(&ranked[pos]) {
            found += 1;
        }
    }
    found as f64 / denom as f64
}

fn brute_ndcg(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    let mut ideal = 0.0;
    for pos in 0..k.min(relevant.len()) {
        ideal += 1.0 / ((pos + 2) as f64).log2();
    }
    if ideal == 0.0 {
        return 0.0;
    }
    let mut dcg = 0.0;
    for pos in 0..k.min(ranked.len()) {
        if relevant.contains(&ranked[pos]) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    dcg / ideal
}

fn random_triple(rng: &mut ChaCha8Rng) -> (Vec<usize>, HashSet<usize>, usize) {
    let n = rng.gen_range(0..40);
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.shuffle(rng);
    let universe = n + rng.gen_range(0..5);
    let relevant: HashSet<usize> = (0..universe).filter(|_| rng.gen_bool(0.2)).collect();
    let k = rng.gen_range(1..=30);
    (ranked, relevant, k)
}

#[test]
fn metrics_equal_brute_force_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..1000 {
        let (ranked, relevant, k) = random_triple(&mut rng);
        assert_eq!(hit_at_k(&ranked, &relevant, k), brute_hit(&ranked, &relevant, k));
        assert_eq!(recall_at_k(&ranked, &relevant, k), brute_recall(&ranked, &relevant, k));
        assert_eq!(ndcg_at_k(&ranked, &relevant, k), brute_ndcg(&ranked, &relevant, k));
    }
}

#[test]
fn known_values() {
    let relevant: HashSet<usize> = [3, 7].into_iter().collect();
    let ranked = [5, 3, 9, 7, 1];
    assert_eq!(hit_at_k(&ranked, &relevant, 1), 0.0);
    assert_eq!(hit_at_k(&ranked, &relevant, 2), 1.0);
    assert_eq!(recall_at_k(&ranked, &relevant, 2), 0.5);
    assert_eq!(recall_at_k(&ranked, &relevant, 1), 0.0);
    let want = (1.0 / 3f64.log2() + 1.0 / 5f64.log2()) / (1.0 + 1.0 / 3f64.log2());
    assert!((ndcg_at_k(&ranked, &relevant, 5) - want).abs() < 1e-15);
}

#[test]
fn evaluation_excludes_seen_items_and_averages_users() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let items = 25;
    let users = 30;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..users {
        let mut all: Vec<usize> = (0..items).collect();
        all.shuffle(&mut rng);
        let a = rng.gen_range(1..5);
        let b = rng.gen_range(0..3);
        let c = rng.gen_range(0..3);
        train.push(all[..a].to_vec());
        val.push(all[a..a + b].to_vec());
        test.push(all[a + b..a + b + c].to_vec());
    }
    let data = InteractionData::from_folds(items, train.clone(), val.clone(), test.clone()).unwrap();
    let scores: Vec<Vec<f64>> = (0..users)
        .map(|_| (0..items).map(|_| f64::from(rng.gen_range(0..6u8))).collect())
        .collect();
    let k_list = [1, 5, 10];
    let result = evaluate(ModelKind::Embedding, Fold::Test, &k_list, &data, |u| scores[u].clone());

    let mut counted = 0;
    let mut sums = vec![0.0; k_list.len()];
    for u in 0..users {
        if test[u].is_empty() {
            continue;
        }
        counted += 1;
        let mut ranked: Vec<usize> = (0..items).filter(|i| !train[u].contains(i) && !val[u].contains(i)).collect();
        ranked.sort_by(|&a, &b| scores[u][b].partial_cmp(&scores[u][a]).unwrap().then(a.cmp(&b)));
        assert_eq!(rank_candidates(&scores[u], u, Fold::Test, &data), ranked);
        let relevant: HashSet<usize> = test[u].iter().copied().collect();
        for (s, &k) in sums.iter_mut().zip(&k_list) {
            *s += brute_ndcg(&ranked, &relevant, k);
        }
    }
    assert_eq!(result.users, counted);
    for (s, &k) in sums.iter().zip(&k_list) {
        assert!((result.ndcg(k) - s / counted as f64).abs() < 1e-12);
    }
}
