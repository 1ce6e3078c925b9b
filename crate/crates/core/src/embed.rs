//! Embedding-based recommender.
//!
//! Users and items get metadata-aware representations
//!
//! ```text
//! v_u = tanh(r_u + mean_{i ∈ I_u} r_i + Σ_l mean_{c ∈ C_u^l} r_c)
//! v_i = tanh(r_i + Σ_l mean_{c ∈ C_i^l} r_c)
//! ```
//!
//! scored by `w · (v_u ⊙ v_i)` and normalized with a full softmax over items.
//! `I_u` is always the user's train fold. Empty sets contribute nothing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::HinGraph;
use crate::numeric::{softmax, softmax_backward};
use crate::split::InteractionData;

pub const DEFAULT_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedModelParams {
    pub dim: usize,
    /// One row per node of every type, stacked in type order.
    pub table: Vec<f64>,
    pub out_weight: Vec<f64>,
    row_offsets: Vec<usize>,
}

impl EmbedModelParams {
    pub fn zeros(graph: &HinGraph, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let row_offsets = row_offsets(graph);
        let rows = *row_offsets.last().expect("offsets end with the total");
        EmbedModelParams {
            dim,
            table: vec![0.0; rows * dim],
            out_weight: vec![0.0; dim],
            row_offsets,
        }
    }

    /// Uniform initialization in `[-0.5/d, 0.5/d]` for the table and `w`.
    pub fn init(graph: &HinGraph, dim: usize, seed: u64) -> Self {
        let mut params = Self::zeros(graph, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 0.5 / dim as f64;
        for x in params.table.iter_mut().chain(params.out_weight.iter_mut()) {
            *x = rng.gen_range(-bound..=bound);
        }
        params
    }

    pub fn num_rows(&self) -> usize {
        *self.row_offsets.last().expect("offsets end with the total")
    }

    pub fn row_index(&self, node_type: usize, index: usize) -> usize {
        debug_assert!(self.row_offsets[node_type] + index < self.row_offsets[node_type + 1]);
        self.row_offsets[node_type] + index
    }

    pub fn row(&self, node_type: usize, index: usize) -> &[f64] {
        self.table_row(self.row_index(node_type, index))
    }

    pub fn row_mut(&mut self, node_type: usize, index: usize) -> &mut [f64] {
        let r = self.row_index(node_type, index);
        &mut self.table[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn table_row(&self, row: usize) -> &[f64] {
        &self.table[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn is_finite(&self) -> bool {
        self.table.iter().chain(&self.out_weight).all(|x| x.is_finite())
    }
}

/// First table row of each node type, followed by the total row count.
pub fn row_offsets(graph: &HinGraph) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(graph.node_types().len() + 1);
    let mut rows = 0;
    for t in graph.node_types() {
        offsets.push(rows);
        rows += t.len();
    }
    offsets.push(rows);
    offsets
}

/// Table rows feeding each user and item representation.
#[derive(Debug, Clone)]
pub struct EmbedFeatures {
    user_rows: Vec<usize>,
    item_rows: Vec<usize>,
    user_items: Vec<Vec<usize>>,
    user_attrs: Vec<Vec<Vec<usize>>>,
    item_attrs: Vec<Vec<Vec<usize>>>,
}

impl EmbedFeatures {
    /// Attribute groups come from every non-interaction relation touching the
    /// user or item type; the neighbor on the other end is the attribute.
    pub fn new(graph: &HinGraph, data: &InteractionData) -> Self {
        let offsets = row_offsets(graph);
        let row_index = |t: usize, x: usize| offsets[t] + x;
        let (ut, it) = (graph.user_type(), graph.item_type());
        let mut user_attrs = vec![Vec::new(); graph.num_users()];
        let mut item_attrs = vec![Vec::new(); graph.num_items()];
        for (r, rel) in graph.relations().iter().enumerate() {
            if r == graph.interaction_index() {
                continue;
            }
            let (a, b) = (rel.src_type(), rel.dst_type());
            let group = |forward: bool, target: &mut Vec<Vec<Vec<usize>>>| {
                let mut lists = vec![Vec::new(); target.len()];
                for &(s, d) in rel.edges() {
                    let (owner, attr, attr_type) = if forward { (s, d, b) } else { (d, s, a) };
                    lists[owner].push(row_index(attr_type, attr));
                }
                for (t, l) in target.iter_mut().zip(lists) {
                    t.push(l);
                }
            };
            if a == ut {
                group(true, &mut user_attrs);
            } else if b == ut {
                group(false, &mut user_attrs);
            }
            if a == it {
                group(true, &mut item_attrs);
            } else if b == it {
                group(false, &mut item_attrs);
            }
        }
        EmbedFeatures {
            user_rows: (0..graph.num_users()).map(|u| row_index(ut, u)).collect(),
            item_rows: (0..graph.num_items()).map(|i| row_index(it, i)).collect(),
            user_items: (0..data.num_users()).map(|u| data.train(u).to_vec()).collect(),
            user_attrs,
            item_attrs,
        }
    }

    pub fn num_items(&self) -> usize {
        self.item_rows.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_rows.len()
    }
}

fn add_mean(acc: &mut [f64], params: &EmbedModelParams, rows: impl ExactSizeIterator<Item = usize>) {
    let n = rows.len();
    if n == 0 {
        return;
    }
    let scale = 1.0 / n as f64;
    for r in rows {
        for (a, x) in acc.iter_mut().zip(params.table_row(r)) {
            *a += scale * x;
        }
    }
}

fn scatter_mean(grad: &mut [f64], dim: usize, upstream: &[f64], rows: impl ExactSizeIterator<Item = usize>) {
    let n = rows.len();
    if n == 0 {
        return;
    }
    let scale = 1.0 / n as f64;
    for r in rows {
        for (g, u) in grad[r * dim..(r + 1) * dim].iter_mut().zip(upstream) {
            *g += scale * u;
        }
    }
}

/// Item representations `v_i`, row-major `num_items × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemReprs {
    dim: usize,
    values: Vec<f64>,
}

impl ItemReprs {
    pub fn compute(params: &EmbedModelParams, features: &EmbedFeatures) -> Self {
        let d = params.dim;
        let mut values = vec![0.0; features.num_items() * d];
        for (i, out) in values.chunks_mut(d).enumerate() {
            out.copy_from_slice(params.table_row(features.item_rows[i]));
            for group in &features.item_attrs[i] {
                add_mean(out, params, group.iter().copied());
            }
            for x in out.iter_mut() {
                *x = x.tanh();
            }
        }
        ItemReprs { dim: d, values }
    }

    pub fn get(&self, item: usize) -> &[f64] {
        &self.values[item * self.dim..(item + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn item_repr(params: &EmbedModelParams, features: &EmbedFeatures, item: usize) -> Vec<f64> {
    let mut out = params.table_row(features.item_rows[item]).to_vec();
    for group in &features.item_attrs[item] {
        add_mean(&mut out, params, group.iter().copied());
    }
    out.iter().map(|x| x.tanh()).collect()
}

pub fn user_repr(params: &EmbedModelParams, features: &EmbedFeatures, user: usize) -> Vec<f64> {
    let mut out = params.table_row(features.user_rows[user]).to_vec();
    add_mean(&mut out, params, features.user_items[user].iter().map(|&i| features.item_rows[i]));
    for group in &features.user_attrs[user] {
        add_mean(&mut out, params, group.iter().copied());
    }
    out.iter().map(|x| x.tanh()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserScores {
    pub user: usize,
    pub user_repr: Vec<f64>,
    pub logits: Vec<f64>,
    /// `z_u = softmax(logits)`.
    pub z: Vec<f64>,
}

pub fn score_all(params: &EmbedModelParams, features: &EmbedFeatures, items: &ItemReprs, user: usize) -> UserScores {
    let v_u = user_repr(params, features, user);
    let weighted: Vec<f64> = v_u.iter().zip(&params.out_weight).map(|(a, b)| a * b).collect();
    let logits: Vec<f64> = (0..items.len())
        .map(|i| items.get(i).iter().zip(&weighted).map(|(a, b)| a * b).sum())
        .collect();
    let z = softmax(&logits);
    UserScores {
        user,
        user_repr: v_u,
        logits,
        z,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedGrads {
    pub table: Vec<f64>,
    pub out_weight: Vec<f64>,
}

impl EmbedGrads {
    pub fn zeros(params: &EmbedModelParams) -> Self {
        EmbedGrads {
            table: vec![0.0; params.table.len()],
            out_weight: vec![0.0; params.out_weight.len()],
        }
    }

    pub fn add(&mut self, other: &EmbedGrads) {
        for (a, b) in self.table.iter_mut().zip(&other.table) {
            *a += b;
        }
        for (a, b) in self.out_weight.iter_mut().zip(&other.out_weight) {
            *a += b;
        }
    }
}

/// Backpropagates `upstream = ∂L/∂z_u` through softmax, the linear layer and
/// the user representation. Gradients w.r.t. item representations are
/// accumulated into `item_grad` (`num_items × d`) and must be pushed through
/// [`finish_item_backward`] once per batch.
pub fn backward_user(
    params: &EmbedModelParams,
    features: &EmbedFeatures,
    items: &ItemReprs,
    scores: &UserScores,
    upstream: &[f64],
    grads: &mut EmbedGrads,
    item_grad: &mut [f64],
) {
    let d = params.dim;
    let glogits = softmax_backward(&scores.z, upstream);
    let v_u = &scores.user_repr;
    let w = &params.out_weight;
    let mut g_vu = vec![0.0; d];
    let wv: Vec<f64> = w.iter().zip(v_u).map(|(a, b)| a * b).collect();
    for (i, &gl) in glogits.iter().enumerate() {
        if gl == 0.0 {
            continue;
        }
        let v_i = items.get(i);
        let gi = &mut item_grad[i * d..(i + 1) * d];
        for k in 0..d {
            grads.out_weight[k] += gl * v_u[k] * v_i[k];
            g_vu[k] += gl * w[k] * v_i[k];
            gi[k] += gl * wv[k];
        }
    }
    let g_h: Vec<f64> = g_vu.iter().zip(v_u).map(|(g, v)| g * (1.0 - v * v)).collect();
    let u = scores.user;
    scatter_mean(&mut grads.table, d, &g_h, std::iter::once(features.user_rows[u]));
    scatter_mean(
        &mut grads.table,
        d,
        &g_h,
        features.user_items[u].iter().map(|&i| features.item_rows[i]),
    );
    for group in &features.user_attrs[u] {
        scatter_mean(&mut grads.table, d, &g_h, group.iter().copied());
    }
}

/// Pushes accumulated item-representation gradients into the table.
pub fn finish_item_backward(
    params: &EmbedModelParams,
    features: &EmbedFeatures,
    items: &ItemReprs,
    item_grad: &[f64],
    grads: &mut EmbedGrads,
) {
    let d = params.dim;
    for i in 0..features.num_items() {
        let g = &item_grad[i * d..(i + 1) * d];
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let g_h: Vec<f64> = g.iter().zip(items.get(i)).map(|(g, v)| g * (1.0 - v * v)).collect();
        scatter_mean(&mut grads.table, d, &g_h, std::iter::once(features.item_rows[i]));
        for group in &features.item_attrs[i] {
            scatter_mean(&mut grads.table, d, &g_h, group.iter().copied());
        }
    }
}

/// Gradients of `upstream · z_u` for a single user.
pub fn backward(
    params: &EmbedModelParams,
    features: &EmbedFeatures,
    items: &ItemReprs,
    scores: &UserScores,
    upstream: &[f64],
) -> EmbedGrads {
    let mut grads = EmbedGrads::zeros(params);
    let mut item_grad = vec![0.0; items.len() * params.dim];
    backward_user(params, features, items, scores, upstream, &mut grads, &mut item_grad);
    finish_item_backward(params, features, items, &item_grad, &mut grads);
    grads
}
