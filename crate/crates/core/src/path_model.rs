//! The differentiable meta-path random-walk model.
//!
//! Every edge carries a free parameter `rho`; its transition weight is
//! `softplus(rho)`. For a user `u` and meta-path `k` the walk mass over items
//! is the row `e_u · M_1 · … · M_L`, computed as successive sparse
//! vector-matrix products. Rows are normalized by their sums `Z_{u,k}` and
//! mixed by `softmax(path_logits)`:
//!
//! ```text
//! z'_u = Σ_k q_k · (e_u Π_k) / Z_{u,k}
//! ```
//!
//! Paths that reach no item for a user (`Z_{u,k} = 0`) are dropped and the
//! mixture is renormalized over the remaining paths for that user.

use serde::{Deserialize, Serialize};

use crate::graph::HinGraph;
use crate::metapath::MetaPath;
use crate::numeric::{sigmoid, softmax, softplus};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathModelParams {
    /// One pre-activation weight per edge, laid out by `HinGraph::rho_offset`.
    pub rho: Vec<f64>,
    pub path_logits: Vec<f64>,
}

impl PathModelParams {
    /// Uniform start: every edge weight `softplus(0) = ln 2`, uniform mixture.
    pub fn new(graph: &HinGraph, num_paths: usize) -> Self {
        PathModelParams {
            rho: vec![0.0; graph.num_edge_params()],
            path_logits: vec![0.0; num_paths],
        }
    }

    pub fn num_params(&self) -> usize {
        self.rho.len() + self.path_logits.len()
    }
}

/// `softmax(path_logits)`.
pub fn path_distribution(params: &PathModelParams) -> Vec<f64> {
    softmax(&params.path_logits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathGrads {
    pub rho: Vec<f64>,
    pub path_logits: Vec<f64>,
}

impl PathGrads {
    pub fn zeros(params: &PathModelParams) -> Self {
        PathGrads {
            rho: vec![0.0; params.rho.len()],
            path_logits: vec![0.0; params.path_logits.len()],
        }
    }

    pub fn add(&mut self, other: &PathGrads) {
        for (a, b) in self.rho.iter_mut().zip(&other.rho) {
            *a += b;
        }
        for (a, b) in self.path_logits.iter_mut().zip(&other.path_logits) {
            *a += b;
        }
    }
}

/// Walk mass of one meta-path for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    /// Frontier vector at every position; only the final row when the
    /// forward pass did not retain intermediates.
    frontiers: Vec<Vec<f64>>,
    normalizer: f64,
}

impl PathTrace {
    /// Unnormalized row `Π_k[u, :]`.
    pub fn row(&self) -> &[f64] {
        self.frontiers.last().expect("at least the final row")
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn reaches_items(&self) -> bool {
        self.normalizer > 0.0
    }

    pub fn frontiers(&self) -> &[Vec<f64>] {
        &self.frontiers
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionResult {
    pub user: usize,
    /// `z'_u`, a distribution over items.
    pub z_prime: Vec<f64>,
    /// Effective mixture weights: renormalized over surviving paths, zero for dropped ones.
    pub mixture: Vec<f64>,
    pub traces: Vec<PathTrace>,
    retained: bool,
}

impl DiffusionResult {
    pub fn has_intermediates(&self) -> bool {
        self.retained
    }

    /// Normalized per-path row `Π_k[u, i] / Z_{u,k}`, zero for dropped paths.
    pub fn normalized_entry(&self, k: usize, item: usize) -> f64 {
        let t = &self.traces[k];
        if t.reaches_items() {
            t.row()[item] / t.normalizer
        } else {
            0.0
        }
    }
}

/// Edge weights and mixture evaluated once for a parameter snapshot.
#[derive(Debug, Clone)]
pub struct PathSnapshot<'a> {
    graph: &'a HinGraph,
    paths: &'a [MetaPath],
    weights: Vec<f64>,
    slopes: Vec<f64>,
    mixture: Vec<f64>,
}

impl<'a> PathSnapshot<'a> {
    pub fn new(params: &PathModelParams, graph: &'a HinGraph, paths: &'a [MetaPath]) -> Self {
        assert_eq!(params.rho.len(), graph.num_edge_params(), "rho does not match the graph");
        assert_eq!(params.path_logits.len(), paths.len(), "one logit per meta-path");
        PathSnapshot {
            graph,
            paths,
            weights: params.rho.iter().map(|&r| softplus(r)).collect(),
            slopes: params.rho.iter().map(|&r| sigmoid(r)).collect(),
            mixture: softmax(&params.path_logits),
        }
    }

    pub fn graph(&self) -> &'a HinGraph {
        self.graph
    }

    pub fn paths(&self) -> &'a [MetaPath] {
        self.paths
    }

    /// Global path distribution `p`.
    pub fn mixture(&self) -> &[f64] {
        &self.mixture
    }

    /// Transition weight `softplus(rho)` of every edge, by flat slot.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn propagate(&self, path: &MetaPath, user: usize, retain: bool) -> PathTrace {
        let n_users = self.graph.node_type(path.node_types()[0]).len();
        let mut current = vec![0.0; n_users];
        current[user] = 1.0;
        let mut frontiers = Vec::with_capacity(if retain { path.len() + 1 } else { 1 });
        for k in 0..path.len() {
            let (template, offset) = path.step_template(self.graph, k);
            let mut next = vec![0.0; template.shape().1];
            for (a, &va) in current.iter().enumerate() {
                if va == 0.0 {
                    continue;
                }
                let (cols, slots) = template.row(a);
                for (&b, &s) in cols.iter().zip(slots) {
                    next[b] += va * self.weights[offset + s];
                }
            }
            let prev = std::mem::replace(&mut current, next);
            if retain {
                frontiers.push(prev);
            }
        }
        let normalizer = current.iter().sum();
        frontiers.push(current);
        PathTrace { frontiers, normalizer }
    }

    /// Diffuses from `user` along every meta-path.
    pub fn forward(&self, user: usize, retain: bool) -> Result<DiffusionResult> {
        if user >= self.graph.num_users() {
            return Err(Error::InvalidArgument(format!("user index {user} out of range")));
        }
        let traces: Vec<PathTrace> = self.paths.iter().map(|p| self.propagate(p, user, retain)).collect();
        let alive_mass: f64 = traces
            .iter()
            .zip(&self.mixture)
            .filter(|(t, _)| t.reaches_items())
            .map(|(_, p)| p)
            .sum();
        if alive_mass == 0.0 {
            return Err(Error::IsolatedUser(user));
        }
        let mixture: Vec<f64> = traces
            .iter()
            .zip(&self.mixture)
            .map(|(t, p)| if t.reaches_items() { p / alive_mass } else { 0.0 })
            .collect();

        let mut z_prime = vec![0.0; self.graph.num_items()];
        for (t, &q) in traces.iter().zip(&mixture) {
            if q == 0.0 {
                continue;
            }
            let scale = q / t.normalizer;
            for (z, &v) in z_prime.iter_mut().zip(t.row()) {
                *z += scale * v;
            }
        }
        Ok(DiffusionResult {
            user,
            z_prime,
            mixture,
            traces,
            retained: retain,
        })
    }

    /// Accumulates `∂L/∂rho` and `∂L/∂path_logits` into `grads`, given
    /// `upstream = ∂L/∂z'_u`.
    pub fn backward(&self, result: &DiffusionResult, upstream: &[f64], grads: &mut PathGrads) -> Result<()> {
        if !result.retained {
            return Err(Error::MissingIntermediates);
        }
        assert_eq!(upstream.len(), result.z_prime.len());

        // a_k = g · y_k with y_k the normalized row of path k.
        let alignment: Vec<f64> = result
            .traces
            .iter()
            .map(|t| {
                if !t.reaches_items() {
                    return 0.0;
                }
                t.row().iter().zip(upstream).map(|(v, g)| v * g).sum::<f64>() / t.normalizer
            })
            .collect();

        // Softmax restricted to the surviving paths.
        let mean: f64 = result.mixture.iter().zip(&alignment).map(|(q, a)| q * a).sum();
        for (k, (&q, &a)) in result.mixture.iter().zip(&alignment).enumerate() {
            grads.path_logits[k] += q * (a - mean);
        }

        for (k, path) in self.paths.iter().enumerate() {
            let q = result.mixture[k];
            let trace = &result.traces[k];
            if q == 0.0 {
                continue;
            }
            // Through y = v / Σv.
            let z = trace.normalizer;
            let mut grad: Vec<f64> = upstream.iter().map(|g| q * (g - alignment[k]) / z).collect();

            for s in (0..path.len()).rev() {
                let (template, offset) = path.step_template(self.graph, s);
                let input = &trace.frontiers[s];
                let mut prev = if s > 0 { vec![0.0; input.len()] } else { Vec::new() };
                for (a, &va) in input.iter().enumerate() {
                    if va == 0.0 {
                        continue;
                    }
                    let (cols, slots) = template.row(a);
                    let mut acc = 0.0;
                    for (&b, &slot) in cols.iter().zip(slots) {
                        let j = offset + slot;
                        grads.rho[j] += va * grad[b] * self.slopes[j];
                        acc += self.weights[j] * grad[b];
                    }
                    if s > 0 {
                        prev[a] = acc;
                    }
                }
                grad = prev;
            }
        }
        Ok(())
    }
}

/// One-shot forward pass with intermediates retained.
pub fn forward(params: &PathModelParams, graph: &HinGraph, user: usize, paths: &[MetaPath]) -> Result<DiffusionResult> {
    PathSnapshot::new(params, graph, paths).forward(user, true)
}

/// Gradients of `upstream · z'_u` w.r.t. all path-model parameters.
pub fn backward(
    params: &PathModelParams,
    graph: &HinGraph,
    paths: &[MetaPath],
    result: &DiffusionResult,
    upstream: &[f64],
) -> Result<PathGrads> {
    let snapshot = PathSnapshot::new(params, graph, paths);
    let mut grads = PathGrads::zeros(params);
    snapshot.backward(result, upstream, &mut grads)?;
    Ok(grads)
}
