//! Random small networks and brute-force reference implementations.

#![allow(dead_code)]

use pathdistill::embed::EmbedModelParams;
use pathdistill::graph::{HinGraph, LoadOptions, RelationPairs};
use pathdistill::metapath::{parse_all, Direction, MetaPath};
use pathdistill::path_model::PathModelParams;
use pathdistill::split::InteractionData;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const PATH_POOL: [&str; 7] = [
    "user -click-> item",
    "user -click-> item <-click- user -click-> item",
    "user -click-> item -has_genre-> genre <-has_genre- item",
    "user -in_group-> group <-in_group- user -click-> item",
    "user -click-> item -similar-> item",
    "user -click-> item -similar-> item -has_genre-> genre <-has_genre- item",
    "user -in_group-> group <-in_group- user -click-> item -similar-> item",
];

#[derive(Debug, Clone, Copy)]
pub struct Size {
    pub users: usize,
    pub items: usize,
    pub genres: usize,
    pub groups: usize,
    pub max_clicks: usize,
}

pub const TINY: Size = Size {
    users: 4,
    items: 5,
    genres: 2,
    groups: 2,
    max_clicks: 3,
};

/// At most 30 nodes in total.
pub const SMALL: Size = Size {
    users: 9,
    items: 11,
    genres: 5,
    groups: 4,
    max_clicks: 5,
};

pub struct Instance {
    pub graph: HinGraph,
    pub data: InteractionData,
    pub specs: Vec<String>,
    pub paths: Vec<MetaPath>,
}

fn pair(a: String, b: String) -> (String, String) {
    (a, b)
}

/// Random network with users, items, genres and user groups. Each type gets
/// between one and `size` nodes; every user clicks at least once.
pub fn random_graph(rng: &mut ChaCha8Rng, size: Size) -> HinGraph {
    let users = rng.gen_range(2..=size.users);
    let items = rng.gen_range(2..=size.items);
    let genres = rng.gen_range(1..=size.genres);
    let groups = rng.gen_range(1..=size.groups);
    let mut clicks = Vec::new();
    let all: Vec<usize> = (0..items).collect();
    for u in 0..users {
        let n = rng.gen_range(1..=size.max_clicks.min(items));
        for &i in all.choose_multiple(rng, n) {
            clicks.push(pair(format!("u{u}"), format!("i{i}")));
        }
    }
    let mut has_genre = Vec::new();
    for i in 0..items {
        for g in 0..genres {
            if rng.gen_bool(0.4) {
                has_genre.push(pair(format!("i{i}"), format!("g{g}")));
            }
        }
    }
    let mut in_group = Vec::new();
    for u in 0..users {
        if rng.gen_bool(0.7) {
            in_group.push(pair(format!("u{u}"), format!("c{}", rng.gen_range(0..groups))));
        }
    }
    let mut similar = Vec::new();
    for a in 0..items {
        for b in 0..items {
            if a != b && rng.gen_bool(0.2) {
                similar.push(pair(format!("i{a}"), format!("i{b}")));
            }
        }
    }
    let rel = |name: &str, src: &str, dst: &str, pairs: Vec<(String, String)>| RelationPairs {
        name: name.into(),
        src: src.into(),
        dst: dst.into(),
        pairs,
    };
    let options = LoadOptions {
        node_types: vec!["genre".into(), "group".into()],
        ..LoadOptions::default()
    };
    HinGraph::from_pairs(
        &clicks,
        &[
            rel("has_genre", "item", "genre", has_genre),
            rel("in_group", "user", "group", in_group),
            rel("similar", "item", "item", similar),
        ],
        &options,
    )
    .expect("valid random graph")
}

/// Random graph, one to three meta-paths from the pool, and every click used
/// as a training label.
pub fn random_instance(rng: &mut ChaCha8Rng, size: Size) -> Instance {
    let graph = random_graph(rng, size);
    let n = rng.gen_range(1..=3);
    let specs: Vec<String> = PATH_POOL.choose_multiple(rng, n).map(|s| s.to_string()).collect();
    let paths = parse_all(&specs, &graph).expect("pool paths parse");
    let users = graph.num_users();
    let data = InteractionData::from_folds(
        graph.num_items(),
        graph.user_items(),
        vec![Vec::new(); users],
        vec![Vec::new(); users],
    )
    .expect("valid folds");
    Instance {
        graph,
        data,
        specs,
        paths,
    }
}

pub fn random_path_params(rng: &mut ChaCha8Rng, graph: &HinGraph, num_paths: usize) -> PathModelParams {
    let mut p = PathModelParams::new(graph, num_paths);
    for r in p.rho.iter_mut() {
        *r = rng.gen_range(-1.5..1.5);
    }
    for l in p.path_logits.iter_mut() {
        *l = rng.gen_range(-1.0..1.0);
    }
    p
}

pub fn random_embed_params(rng: &mut ChaCha8Rng, graph: &HinGraph, dim: usize) -> EmbedModelParams {
    let mut p = EmbedModelParams::zeros(graph, dim);
    for x in p.table.iter_mut().chain(p.out_weight.iter_mut()) {
        *x = rng.gen_range(-0.8..0.8);
    }
    p
}

pub fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Every walk from `user` that instantiates `path`, with the product of
/// `softplus(rho)` over its edges. Edges are looked up by scanning the
/// relation's edge list, whose positions are the parameter slots.
pub fn enumerate_walks(graph: &HinGraph, path: &MetaPath, rho: &[f64], user: usize) -> Vec<(Vec<usize>, f64)> {
    let mut walks = vec![(vec![user], 1.0)];
    for step in path.steps() {
        let rel = graph.relation(step.relation);
        let offset = graph.rho_offset(step.relation);
        let mut next = Vec::new();
        for (nodes, w) in &walks {
            let at = *nodes.last().unwrap();
            for (slot, &(s, d)) in rel.edges().iter().enumerate() {
                let to = match step.direction {
                    Direction::Forward if s == at => d,
                    Direction::Inverse if d == at => s,
                    _ => continue,
                };
                let mut n = nodes.clone();
                n.push(to);
                next.push((n, w * softplus(rho[offset + slot])));
            }
        }
        walks = next;
    }
    walks
}

/// Raw walk mass `Π[u, ·]` by summing enumerated walks.
pub fn walk_mass(graph: &HinGraph, path: &MetaPath, rho: &[f64], user: usize) -> Vec<f64> {
    let mut out = vec![0.0; graph.num_items()];
    for (nodes, w) in enumerate_walks(graph, path, rho, user) {
        out[*nodes.last().unwrap()] += w;
    }
    out
}

/// Reference `z'_u`; `None` when no meta-path reaches an item.
pub fn reference_z_prime(graph: &HinGraph, paths: &[MetaPath], params: &PathModelParams, user: usize) -> Option<Vec<f64>> {
    let q = softmax(&params.path_logits);
    let rows: Vec<Vec<f64>> = paths.iter().map(|p| walk_mass(graph, p, &params.rho, user)).collect();
    let sums: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    let alive: f64 = q.iter().zip(&sums).filter(|(_, s)| **s > 0.0).map(|(q, _)| q).sum();
    if alive == 0.0 {
        return None;
    }
    let mut z = vec![0.0; graph.num_items()];
    for ((row, s), qk) in rows.iter().zip(&sums).zip(&q) {
        if *s > 0.0 {
            for (zi, r) in z.iter_mut().zip(row) {
                *zi += qk / alive * r / s;
            }
        }
    }
    Some(z)
}

/// `max_i |a_i - b_i|`.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn neighbor_rows(graph: &HinGraph, params: &EmbedModelParams, node_type: usize, node: usize) -> Vec<Vec<usize>> {
    let mut groups = Vec::new();
    for (r, rel) in graph.relations().iter().enumerate() {
        if r == graph.interaction_index() {
            continue;
        }
        let group: Vec<usize> = if rel.src_type() == node_type {
            rel.edges()
                .iter()
                .filter(|e| e.0 == node)
                .map(|e| params.row_index(rel.dst_type(), e.1))
                .collect()
        } else if rel.dst_type() == node_type {
            rel.edges()
                .iter()
                .filter(|e| e.1 == node)
                .map(|e| params.row_index(rel.src_type(), e.0))
                .collect()
        } else {
            continue;
        };
        groups.push(group);
    }
    groups
}

fn add_mean(acc: &mut [f64], params: &EmbedModelParams, rows: &[usize]) {
    if rows.is_empty() {
        return;
    }
    for &r in rows {
        for (a, x) in acc.iter_mut().zip(params.table_row(r)) {
            *a += x / rows.len() as f64;
        }
    }
}

/// Reference embedding-model distribution `z_u`.
pub fn reference_z(graph: &HinGraph, data: &InteractionData, params: &EmbedModelParams, user: usize) -> Vec<f64> {
    let (ut, it) = (graph.user_type(), graph.item_type());
    let item = |i: usize| -> Vec<f64> {
        let mut h = params.row(it, i).to_vec();
        for g in neighbor_rows(graph, params, it, i) {
            add_mean(&mut h, params, &g);
        }
        h.iter().map(|x| x.tanh()).collect()
    };
    let mut h = params.row(ut, user).to_vec();
    let clicked: Vec<usize> = data.train(user).iter().map(|&i| params.row_index(it, i)).collect();
    add_mean(&mut h, params, &clicked);
    for g in neighbor_rows(graph, params, ut, user) {
        add_mean(&mut h, params, &g);
    }
    let v_u: Vec<f64> = h.iter().map(|x| x.tanh()).collect();
    let logits: Vec<f64> = (0..graph.num_items())
        .map(|i| {
            item(i)
                .iter()
                .zip(&v_u)
                .zip(&params.out_weight)
                .map(|((a, b), w)| a * b * w)
                .sum()
        })
        .collect();
    softmax(&logits)
}

/// Central differences of `f` around `x`, one coordinate at a time.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let up = f(&probe);
            probe[j] = x[j] - h;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-4;
/// Magnitude below which gradients are compared absolutely. Rounding noise in
/// the differences is about `1e-16 · |loss| / FD_STEP`, near `1e-10` here.
pub const FD_FLOOR: f64 = 1e-5;

/// Largest `|a - n| / max(|a|, |n|, FD_FLOOR)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR))
        .fold(0.0, f64::max)
}

/// Worst relative error between `total_loss` gradients and central
/// differences over every parameter of one random tiny instance.
pub fn total_loss_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    use pathdistill::train::{total_loss, Objective, Routing, TrainData};

    let inst = random_instance(rng, TINY);
    let td = TrainData::new(&inst.graph, &inst.data, &inst.paths);
    let dim = rng.gen_range(1..=3);
    let embed = random_embed_params(rng, &inst.graph, dim);
    let path = random_path_params(rng, &inst.graph, inst.paths.len());
    let users: Vec<usize> = (0..inst.graph.num_users()).collect();
    let objective = Objective {
        alpha: rng.gen_range(0.1..2.0),
        beta: rng.gen_range(0.1..2.0),
        kl: true,
    };
    let routing = Routing { embed: true, path: true };
    let (_, grads) = total_loss(&td, &embed, Some(&path), &users, objective, routing).unwrap();
    let loss = |e: &EmbedModelParams, p: &PathModelParams| {
        total_loss(&td, e, Some(p), &users, objective, Routing { embed: false, path: false })
            .unwrap()
            .0
            .total
    };

    let mut worst: f64 = 0.0;
    let num = numeric_gradient(&embed.table, FD_STEP, |x| {
        let mut e = embed.clone();
        e.table.copy_from_slice(x);
        loss(&e, &path)
    });
    worst = worst.max(max_relative_error(&grads.embed.table, &num));
    let num = numeric_gradient(&embed.out_weight, FD_STEP, |x| {
        let mut e = embed.clone();
        e.out_weight.copy_from_slice(x);
        loss(&e, &path)
    });
    worst = worst.max(max_relative_error(&grads.embed.out_weight, &num));
    let num = numeric_gradient(&path.rho, FD_STEP, |x| {
        let mut p = path.clone();
        p.rho.copy_from_slice(x);
        loss(&embed, &p)
    });
    worst = worst.max(max_relative_error(&grads.path.rho, &num));
    let num = numeric_gradient(&path.path_logits, FD_STEP, |x| {
        let mut p = path.clone();
        p.path_logits.copy_from_slice(x);
        loss(&embed, &p)
    });
    worst.max(max_relative_error(&grads.path.path_logits, &num))
}

/// Every walk from `user` to `item` under `path`, ranked like beam search:
/// `(nodes, probability, share)` by descending probability, then node
/// sequence. Probabilities use all outgoing edges of a node in the step's
/// direction; shares divide raw walk mass by its total.
pub fn exhaustive_explanations(
    graph: &HinGraph,
    path: &MetaPath,
    rho: &[f64],
    user: usize,
    item: usize,
) -> Vec<(Vec<usize>, f64, f64)> {
    let out_weight = |step: usize, node: usize| -> f64 {
        let s = path.steps()[step];
        let offset = graph.rho_offset(s.relation);
        graph
            .relation(s.relation)
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, e)| match s.direction {
                Direction::Forward => e.0 == node,
                Direction::Inverse => e.1 == node,
            })
            .map(|(k, _)| softplus(rho[offset + k]))
            .sum()
    };
    let walks: Vec<(Vec<usize>, f64)> = enumerate_walks(graph, path, rho, user)
        .into_iter()
        .filter(|(n, _)| *n.last().unwrap() == item)
        .collect();
    let total: f64 = walks.iter().map(|w| w.1).sum();
    let mut out: Vec<(Vec<usize>, f64, f64)> = walks
        .into_iter()
        .map(|(nodes, mass)| {
            let denom: f64 = (0..path.len()).map(|s| out_weight(s, nodes[s])).product();
            let prob = mass / denom;
            (nodes, prob, mass / total)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}
