//! Recommendation reasons from the walk model.
//!
//! For a pair `(u, i)` each meta-path gets a contribution weight `w_P(u, i)`,
//! and a beam search over the path's positions recovers the concrete walks
//! that carry most of its mass.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::graph::HinGraph;
use crate::metapath::MetaPath;
use crate::metrics::rank_candidates;
use crate::path_model::PathSnapshot;
use crate::split::{Fold, InteractionData};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContributionVariant {
    /// `q_P · Π_P[u,i] / Z_{u,P}`, the terms the model actually mixes.
    #[default]
    Normalized,
    /// `q_P · Π_P[u,i]` on raw walk mass.
    Raw,
}

/// `w_P(u, i)` for every meta-path; sums to one.
pub fn meta_path_contributions(
    snapshot: &PathSnapshot<'_>,
    user: usize,
    item: usize,
    variant: ContributionVariant,
) -> Result<Vec<f64>> {
    if item >= snapshot.graph().num_items() {
        return Err(Error::InvalidArgument(format!("item index {item} out of range")));
    }
    let no_path = || Error::NoSupportingPath { user, item };
    let result = match snapshot.forward(user, false) {
        Ok(r) => r,
        Err(Error::IsolatedUser(_)) => return Err(no_path()),
        Err(e) => return Err(e),
    };
    let terms: Vec<f64> = match variant {
        ContributionVariant::Normalized => (0..result.traces.len())
            .map(|k| result.mixture[k] * result.normalized_entry(k, item))
            .collect(),
        ContributionVariant::Raw => result
            .traces
            .iter()
            .zip(snapshot.mixture())
            .map(|(t, q)| q * t.row()[item])
            .collect(),
    };
    let total: f64 = terms.iter().sum();
    if !(total > 0.0) {
        return Err(no_path());
    }
    Ok(terms.into_iter().map(|t| t / total).collect())
}

/// One walk instantiating a meta-path from `u` to `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcretePath {
    /// Node index at each position; types follow the meta-path.
    pub nodes: Vec<usize>,
    /// Product of row-normalized transition probabilities.
    pub probability: f64,
    /// Raw walk mass as a fraction of `Π_P[u, i]`.
    pub share: f64,
}

/// Backward reach of `item`: entry `s` holds, for every node at position
/// `s`, the walk mass from that node to `item`.
fn mass_to_item(snapshot: &PathSnapshot<'_>, path: &MetaPath, item: usize) -> Vec<Vec<f64>> {
    let graph = snapshot.graph();
    let mut out: Vec<Vec<f64>> = path
        .node_types()
        .iter()
        .map(|&t| vec![0.0; graph.node_type(t).len()])
        .collect();
    out[path.len()][item] = 1.0;
    for s in (0..path.len()).rev() {
        let (template, offset) = path.step_template(graph, s);
        let (head, tail) = out.split_at_mut(s + 1);
        let (here, next) = (&mut head[s], &tail[0]);
        for (a, slot) in here.iter_mut().enumerate() {
            let (cols, slots) = template.row(a);
            *slot = cols
                .iter()
                .zip(slots)
                .map(|(&b, &k)| snapshot.weights()[offset + k] * next[b])
                .sum();
        }
    }
    out
}

/// Top walks from `user` to `item` under `path`, best first. Only partial
/// walks that can still reach `item` compete for the `beam_width` slots, so
/// the search is exhaustive once the beam holds every such walk.
pub fn beam_search_paths(
    snapshot: &PathSnapshot<'_>,
    user: usize,
    item: usize,
    path: &MetaPath,
    beam_width: usize,
) -> Result<Vec<ConcretePath>> {
    if beam_width == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let graph = snapshot.graph();
    if user >= graph.num_users() || item >= graph.num_items() {
        return Err(Error::InvalidArgument(format!("pair ({user}, {item}) out of range")));
    }
    let reach = mass_to_item(snapshot, path, item);
    let total = reach[0][user];
    if !(total > 0.0) {
        return Ok(Vec::new());
    }

    let by_rank = |a: &(Vec<usize>, f64, f64), b: &(Vec<usize>, f64, f64)| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0));
    // (nodes, probability, mass)
    let mut beam: Vec<(Vec<usize>, f64, f64)> = vec![(vec![user], 1.0, 1.0)];
    for s in 0..path.len() {
        let (template, offset) = path.step_template(graph, s);
        let mut candidates = Vec::new();
        for (nodes, prob, mass) in &beam {
            let a = *nodes.last().expect("non-empty walk");
            let (cols, slots) = template.row(a);
            let row_sum: f64 = slots.iter().map(|&k| snapshot.weights()[offset + k]).sum();
            for (&b, &k) in cols.iter().zip(slots) {
                if reach[s + 1][b] == 0.0 {
                    continue;
                }
                let w = snapshot.weights()[offset + k];
                let mut next = nodes.clone();
                next.push(b);
                candidates.push((next, prob * w / row_sum, mass * w));
            }
        }
        candidates.sort_by(by_rank);
        candidates.truncate(beam_width);
        beam = candidates;
    }
    Ok(beam
        .into_iter()
        .map(|(nodes, probability, mass)| ConcretePath {
            nodes,
            probability,
            share: mass / total,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathExplanation {
    pub meta_path: String,
    pub weight: f64,
    pub concrete_paths: Vec<ConcretePath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub user: usize,
    pub item: usize,
    pub paths: Vec<PathExplanation>,
}

impl Explanation {
    pub fn weights(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.weight).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplainOptions {
    pub beam_width: usize,
    /// Concrete walks kept per meta-path.
    pub top_paths: usize,
    pub variant: ContributionVariant,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            beam_width: 10,
            top_paths: 3,
            variant: ContributionVariant::Normalized,
        }
    }
}

pub fn explain_pair(snapshot: &PathSnapshot<'_>, user: usize, item: usize, options: &ExplainOptions) -> Result<Explanation> {
    let weights = meta_path_contributions(snapshot, user, item, options.variant)?;
    let paths = snapshot
        .paths()
        .iter()
        .zip(weights)
        .map(|(mp, weight)| {
            let mut concrete = beam_search_paths(snapshot, user, item, mp, options.beam_width)?;
            concrete.truncate(options.top_paths);
            Ok(PathExplanation {
                meta_path: mp.display_name().to_owned(),
                weight,
                concrete_paths: concrete,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Explanation { user, item, paths })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRef {
    #[serde(rename = "type")]
    pub node_type: String,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonPath {
    pub nodes: Vec<NodeRef>,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReason {
    pub meta_path: String,
    pub weight: f64,
    pub paths: Vec<ReasonPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceContribution {
    pub node: NodeRef,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemReport {
    pub item: String,
    pub score: f64,
    /// Empty when no meta-path connects the user to the item.
    pub reasons: Vec<PathReason>,
    /// Reported walk mass grouped by the node after the user, weighted by `w_P`.
    pub sources: Vec<SourceContribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    pub user: String,
    pub history: Vec<String>,
    pub items: Vec<ItemReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub users: Vec<UserReport>,
    /// Mean `w_P` over every explained recommendation, by meta-path.
    pub average_weights: BTreeMap<String, f64>,
}

fn node_ref(graph: &HinGraph, node_type: usize, index: usize) -> NodeRef {
    let reg = graph.node_type(node_type);
    NodeRef {
        node_type: reg.name().to_owned(),
        id: reg.id_of(index).to_owned(),
    }
}

/// Sums `w_P · share` by the first node after the user.
pub fn group_by_first_hop(explanation: &Explanation, paths: &[MetaPath]) -> Vec<((usize, usize), f64)> {
    let mut groups: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (pe, mp) in explanation.paths.iter().zip(paths) {
        for cp in &pe.concrete_paths {
            *groups.entry((mp.node_types()[1], cp.nodes[1])).or_default() += pe.weight * cp.share;
        }
    }
    let mut out: Vec<_> = groups.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Explains the top `top_n` candidates of every listed user. `scores(u)`
/// ranks the candidates; train items are never recommended.
pub fn build_report<F>(
    snapshot: &PathSnapshot<'_>,
    data: &InteractionData,
    users: &[usize],
    top_n: usize,
    options: &ExplainOptions,
    scores: F,
) -> Result<Report>
where
    F: Fn(usize) -> Vec<f64>,
{
    let graph = snapshot.graph();
    let paths = snapshot.paths();
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut explained = 0usize;
    let mut reports = Vec::with_capacity(users.len());
    for &u in users {
        let s = scores(u);
        // Ranking on the test fold excludes exactly the train and validation items.
        let ranked = rank_candidates(&s, u, Fold::Test, data);
        let mut items = Vec::new();
        for &i in ranked.iter().take(top_n) {
            let (reasons, sources) = match explain_pair(snapshot, u, i, options) {
                Ok(exp) => {
                    explained += 1;
                    for pe in &exp.paths {
                        *sums.entry(pe.meta_path.clone()).or_default() += pe.weight;
                    }
                    let reasons = exp
                        .paths
                        .iter()
                        .zip(paths)
                        .map(|(pe, mp)| PathReason {
                            meta_path: pe.meta_path.clone(),
                            weight: pe.weight,
                            paths: pe
                                .concrete_paths
                                .iter()
                                .map(|cp| ReasonPath {
                                    nodes: cp
                                        .nodes
                                        .iter()
                                        .zip(mp.node_types())
                                        .map(|(&n, &t)| node_ref(graph, t, n))
                                        .collect(),
                                    share: cp.share,
                                })
                                .collect(),
                        })
                        .collect();
                    let sources = group_by_first_hop(&exp, paths)
                        .into_iter()
                        .map(|((t, n), c)| SourceContribution {
                            node: node_ref(graph, t, n),
                            contribution: c,
                        })
                        .collect();
                    (reasons, sources)
                }
                Err(Error::NoSupportingPath { .. }) => (Vec::new(), Vec::new()),
                Err(e) => return Err(e),
            };
            items.push(ItemReport {
                item: graph.items().id_of(i).to_owned(),
                score: s[i],
                reasons,
                sources,
            });
        }
        reports.push(UserReport {
            user: graph.users().id_of(u).to_owned(),
            history: data.train(u).iter().map(|&i| graph.items().id_of(i).to_owned()).collect(),
            items,
        });
    }
    let average_weights = paths
        .iter()
        .map(|mp| {
            let name = mp.display_name().to_owned();
            let mean = if explained == 0 {
                0.0
            } else {
                sums.get(&name).copied().unwrap_or(0.0) / explained as f64
            };
            (name, mean)
        })
        .collect();
    Ok(Report {
        users: reports,
        average_weights,
    })
}

/// Human-readable report, one block per user.
pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    for user in &report.users {
        let _ = writeln!(out, "user {}", user.user);
        let _ = writeln!(out, "  history: [{}]", user.history.join(", "));
        for (rank, item) in user.items.iter().enumerate() {
            let _ = writeln!(out, "  #{} {} (score {:.4})", rank + 1, item.item, item.score);
            if item.reasons.is_empty() {
                let _ = writeln!(out, "      no supporting path");
            }
            for reason in &item.reasons {
                let _ = writeln!(out, "      {:.2}  {}", reason.weight, reason.meta_path);
                for p in &reason.paths {
                    let walk: Vec<String> = p.nodes.iter().map(|n| n.id.clone()).collect();
                    let _ = writeln!(out, "            prob {:.2}  {}", p.share, walk.join(" → "));
                }
            }
            if !item.sources.is_empty() {
                let parts: Vec<String> = item
                    .sources
                    .iter()
                    .map(|s| format!("{} {:.2}", s.node.id, s.contribution))
                    .collect();
                let _ = writeln!(out, "      via: {}", parts.join(", "));
            }
        }
    }
    if !report.average_weights.is_empty() {
        let _ = writeln!(out, "average meta-path weight:");
        for (name, w) in &report.average_weights {
            let _ = writeln!(out, "  {w:.3}  {name}");
        }
    }
    out
}

/// One JSON object per user, newline separated.
pub fn render_json_lines(report: &Report) -> Result<String> {
    let mut out = String::new();
    for user in &report.users {
        out.push_str(&serde_json::to_string(user)?);
        out.push('\n');
    }
    Ok(out)
}
