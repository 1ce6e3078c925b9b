//! Training loop for the four modes.
//!
//! | mode          | objective                       | updated         |
//! |---------------|---------------------------------|-----------------|
//! | `base_only`   | `L1`                            | embeddings      |
//! | `unlearnable` | `α L1 + β L2 + L3`              | embeddings      |
//! | `pipelined`   | `L2`, then `α L1 + β L2 + L3`   | path, then emb. |
//! | `joint`       | `α L1 + β L2 + L3`              | both            |
//!
//! One optimization step evaluates users in fixed-size chunks in parallel and
//! reduces the chunk results in chunk order, so results do not depend on the
//! number of worker threads.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{
    backward_user, finish_item_backward, score_all, EmbedFeatures, EmbedGrads, EmbedModelParams, ItemReprs,
    DEFAULT_DIM,
};
use crate::graph::HinGraph;
use crate::loss::{cross_entropy, cross_entropy_grad, loss_l1, loss_l2, loss_l3, loss_l3_grad, ImitationSchedule, LOG_EPS};
use crate::metapath::MetaPath;
use crate::metrics::{evaluate, kl_fidelity, ModelKind};
use crate::optim::{Adam, AdamConfig};
use crate::path_model::{PathGrads, PathModelParams, PathSnapshot};
use crate::split::{Fold, InteractionData};
use crate::{Error, Result};

/// Full-batch training up to this many users.
pub const FULL_BATCH_LIMIT: usize = 2048;
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    BaseOnly,
    Unlearnable,
    Pipelined,
    Joint,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [
        TrainMode::BaseOnly,
        TrainMode::Unlearnable,
        TrainMode::Pipelined,
        TrainMode::Joint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::BaseOnly => "base_only",
            TrainMode::Unlearnable => "unlearnable",
            TrainMode::Pipelined => "pipelined",
            TrainMode::Joint => "joint",
        }
    }

    pub fn uses_path_model(self) -> bool {
        self != TrainMode::BaseOnly
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown training mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub dim: usize,
    /// Defaults to a step from 1.0 to 0.1 at 30% of `max_iterations`.
    pub alpha: Option<ImitationSchedule>,
    /// Same default as `alpha`.
    pub beta: Option<ImitationSchedule>,
    pub optimizer: AdamConfig,
    /// Users per step once the user set exceeds [`FULL_BATCH_LIMIT`].
    pub batch_size: usize,
    pub max_iterations: usize,
    pub eval_every: usize,
    /// Cutoff of the validation NDCG recorded in the log.
    pub eval_k: usize,
    pub seed: u64,
    /// Upper bound on path-model pre-training steps in pipelined mode.
    pub pretrain_max_iterations: usize,
    /// Evaluations without validation-`L2` improvement before pre-training stops.
    pub pretrain_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let max_iterations = 300;
        TrainConfig {
            mode: TrainMode::Joint,
            dim: DEFAULT_DIM,
            alpha: None,
            beta: None,
            optimizer: AdamConfig::default(),
            batch_size: 512,
            max_iterations,
            eval_every: 10,
            eval_k: 10,
            seed: 0,
            pretrain_max_iterations: max_iterations,
            pretrain_patience: 3,
        }
    }
}

impl TrainConfig {
    fn default_schedule(&self) -> ImitationSchedule {
        ImitationSchedule::step(1.0, 0.1, self.max_iterations * 3 / 10)
    }

    pub fn alpha_schedule(&self) -> ImitationSchedule {
        self.alpha.unwrap_or_else(|| self.default_schedule())
    }

    pub fn beta_schedule(&self) -> ImitationSchedule {
        self.beta.unwrap_or_else(|| self.default_schedule())
    }

    pub fn validate(&self) -> Result<()> {
        self.alpha_schedule().validate()?;
        self.beta_schedule().validate()?;
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if self.eval_every == 0 || self.eval_k == 0 || self.batch_size == 0 {
            return Err(Error::Config("eval_every, eval_k and batch_size must be positive".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Weights of the three loss terms at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub alpha: f64,
    pub beta: f64,
    pub kl: bool,
}

/// Which parameter sets receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Routing {
    pub embed: bool,
    pub path: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: Option<f64>,
    pub l3: Option<f64>,
    pub total: f64,
    pub isolated_users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: EmbedGrads,
    pub path: PathGrads,
}

/// Everything fixed during training: the train-only graph, the split, the
/// meta-paths and the embedding feature lists.
pub struct TrainData<'a> {
    pub graph: &'a HinGraph,
    pub data: &'a InteractionData,
    pub paths: &'a [MetaPath],
    pub features: EmbedFeatures,
}

impl<'a> TrainData<'a> {
    /// `graph` must already be restricted to train interactions.
    pub fn new(graph: &'a HinGraph, data: &'a InteractionData, paths: &'a [MetaPath]) -> Self {
        TrainData {
            graph,
            data,
            paths,
            features: EmbedFeatures::new(graph, data),
        }
    }
}

struct ChunkAcc {
    embed: EmbedGrads,
    item_grad: Vec<f64>,
    path: PathGrads,
    l1: f64,
    l2: f64,
    l3: f64,
    isolated: usize,
}

/// `α L1 + β L2 + [L3]` summed over `users`, with gradients for the routed
/// parameter sets. `path` may be `None` when only `L1` is wanted. Users the
/// walk model cannot reach contribute to `L1` only.
pub fn total_loss(
    td: &TrainData<'_>,
    embed: &EmbedModelParams,
    path: Option<&PathModelParams>,
    users: &[usize],
    objective: Objective,
    routing: Routing,
) -> Result<(LossBreakdown, Gradients)> {
    let need_embed = objective.alpha != 0.0 || objective.kl || routing.embed;
    let items = need_embed.then(|| ItemReprs::compute(embed, &td.features));
    let snapshot = path.map(|p| PathSnapshot::new(p, td.graph, td.paths));
    let num_items = td.graph.num_items();
    let dim = embed.dim;
    let zero_path = PathGrads {
        rho: vec![0.0; td.graph.num_edge_params()],
        path_logits: vec![0.0; td.paths.len()],
    };

    let chunks: Vec<Result<ChunkAcc>> = users
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = ChunkAcc {
                embed: if routing.embed {
                    EmbedGrads::zeros(embed)
                } else {
                    EmbedGrads {
                        table: Vec::new(),
                        out_weight: Vec::new(),
                    }
                },
                item_grad: if routing.embed { vec![0.0; num_items * dim] } else { Vec::new() },
                path: if routing.path { zero_path.clone() } else { PathGrads { rho: Vec::new(), path_logits: Vec::new() } },
                l1: 0.0,
                l2: 0.0,
                l3: 0.0,
                isolated: 0,
            };
            for &u in chunk {
                let label = td.data.label(u);
                let scores = items.as_ref().map(|it| score_all(embed, &td.features, it, u));
                let mut g_z = vec![0.0; num_items];
                if let Some(s) = &scores {
                    acc.l1 += loss_l1(&s.z, &label);
                    cross_entropy_grad(&s.z, &label, 0.0, objective.alpha, &mut g_z);
                }
                if let Some(snap) = &snapshot {
                    match snap.forward(u, routing.path) {
                        Ok(result) => {
                            let mut g_zp = vec![0.0; num_items];
                            acc.l2 += loss_l2(&result.z_prime, &label);
                            cross_entropy_grad(&result.z_prime, &label, LOG_EPS, objective.beta, &mut g_zp);
                            if objective.kl {
                                let s = scores.as_ref().expect("KL needs the embedding model");
                                acc.l3 += loss_l3(&result.z_prime, &s.z);
                                loss_l3_grad(&result.z_prime, &s.z, 1.0, &mut g_zp, &mut g_z);
                            }
                            if routing.path {
                                snap.backward(&result, &g_zp, &mut acc.path)?;
                            }
                        }
                        Err(Error::IsolatedUser(_)) => acc.isolated += 1,
                        Err(e) => return Err(e),
                    }
                }
                if routing.embed {
                    let s = scores.as_ref().expect("embedding scores");
                    let it = items.as_ref().expect("item representations");
                    backward_user(embed, &td.features, it, s, &g_z, &mut acc.embed, &mut acc.item_grad);
                }
            }
            Ok(acc)
        })
        .collect();

    let mut breakdown = LossBreakdown::default();
    let mut l2 = 0.0;
    let mut l3 = 0.0;
    let mut grads = Gradients {
        embed: EmbedGrads::zeros(embed),
        path: zero_path.clone(),
    };
    let mut item_grad = vec![0.0; if routing.embed { num_items * dim } else { 0 }];
    for chunk in chunks {
        let chunk = chunk?;
        breakdown.l1 += chunk.l1;
        l2 += chunk.l2;
        l3 += chunk.l3;
        breakdown.isolated_users += chunk.isolated;
        if routing.embed {
            grads.embed.add(&chunk.embed);
            for (a, b) in item_grad.iter_mut().zip(&chunk.item_grad) {
                *a += b;
            }
        }
        if routing.path {
            grads.path.add(&chunk.path);
        }
    }
    if routing.embed {
        let it = items.as_ref().expect("item representations");
        finish_item_backward(embed, &td.features, it, &item_grad, &mut grads.embed);
    }
    if snapshot.is_some() {
        breakdown.l2 = Some(l2);
        if objective.kl {
            breakdown.l3 = Some(l3);
        }
    }
    breakdown.total = objective.alpha * breakdown.l1 + objective.beta * l2 + if objective.kl { l3 } else { 0.0 };
    Ok((breakdown, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Pipelined mode only: the walk model alone on `L2`.
    Pretrain,
    Main,
}

/// Parameters, optimizer moments and the schedule clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub mode: TrainMode,
    pub phase: Phase,
    /// Steps taken in the current phase; drives the imitation schedules.
    pub iteration: usize,
    pub embed: EmbedModelParams,
    pub path: PathModelParams,
    pub embed_table_opt: Adam,
    pub embed_weight_opt: Adam,
    pub rho_opt: Adam,
    pub logit_opt: Adam,
}

impl TrainState {
    pub fn init(graph: &HinGraph, num_paths: usize, config: &TrainConfig) -> Self {
        let embed = EmbedModelParams::init(graph, config.dim, config.seed);
        let path = PathModelParams::new(graph, num_paths);
        let phase = if config.mode == TrainMode::Pipelined {
            Phase::Pretrain
        } else {
            Phase::Main
        };
        TrainState {
            mode: config.mode,
            phase,
            iteration: 0,
            embed_table_opt: Adam::new(embed.table.len()),
            embed_weight_opt: Adam::new(embed.out_weight.len()),
            rho_opt: Adam::new(path.rho.len()),
            logit_opt: Adam::new(path.path_logits.len()),
            embed,
            path,
        }
    }
}

/// One JSON line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub l3: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub val_ndcg_embed: Option<f64>,
    pub val_ndcg_path: Option<f64>,
    pub kl_fidelity: Option<f64>,
    /// Cross-entropy of `z_u` against validation items, mean over users.
    /// Its minimum is a natural choice for the step schedule's `t0`.
    pub val_loss_embed: Option<f64>,
    pub val_loss_path: Option<f64>,
}

/// Validation view of both models at one parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub val_ndcg_embed: Option<f64>,
    pub val_ndcg_path: Option<f64>,
    pub kl_fidelity: Option<f64>,
    pub val_loss_embed: Option<f64>,
    pub val_loss_path: Option<f64>,
}

/// Per-user output distributions of both models.
pub struct ModelOutputs {
    pub z: Option<Vec<Vec<f64>>>,
    /// `None` for users the walk model cannot reach.
    pub z_prime: Option<Vec<Option<Vec<f64>>>>,
}

impl ModelOutputs {
    pub fn compute(td: &TrainData<'_>, embed: Option<&EmbedModelParams>, path: Option<&PathModelParams>) -> Result<Self> {
        let users: Vec<usize> = (0..td.graph.num_users()).collect();
        let z = embed.map(|p| {
            let items = ItemReprs::compute(p, &td.features);
            users
                .par_iter()
                .map(|&u| score_all(p, &td.features, &items, u).z)
                .collect::<Vec<_>>()
        });
        let z_prime = match path {
            Some(p) => {
                let snap = PathSnapshot::new(p, td.graph, td.paths);
                let out: Result<Vec<Option<Vec<f64>>>> = users
                    .par_iter()
                    .map(|&u| match snap.forward(u, false) {
                        Ok(r) => Ok(Some(r.z_prime)),
                        Err(Error::IsolatedUser(_)) => Ok(None),
                        Err(e) => Err(e),
                    })
                    .collect();
                Some(out?)
            }
            None => None,
        };
        Ok(ModelOutputs { z, z_prime })
    }

    /// Walk-model scores with the uniform fallback for unreachable users.
    pub fn path_scores(&self, user: usize, num_items: usize) -> Vec<f64> {
        match self.z_prime.as_ref().and_then(|zp| zp[user].as_ref()) {
            Some(z) => z.clone(),
            None => vec![1.0 / num_items as f64; num_items],
        }
    }

    /// Mean `KL(z' ‖ z)` over reachable users.
    pub fn kl_fidelity(&self) -> Option<f64> {
        let (z, zp) = (self.z.as_ref()?, self.z_prime.as_ref()?);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = z
            .iter()
            .zip(zp)
            .filter_map(|(a, b)| b.as_ref().map(|b| (a.clone(), b.clone())))
            .collect();
        Some(kl_fidelity(&pairs))
    }
}

pub fn evaluate_snapshot(
    td: &TrainData<'_>,
    embed: Option<&EmbedModelParams>,
    path: Option<&PathModelParams>,
    k: usize,
) -> Result<EvalSnapshot> {
    let outputs = ModelOutputs::compute(td, embed, path)?;
    let num_items = td.graph.num_items();
    let ks = [k];
    let val_users: Vec<usize> = (0..td.data.num_users())
        .filter(|&u| !td.data.fold(Fold::Validation, u).is_empty())
        .collect();
    let mean_val_loss = |dist: &dyn Fn(usize) -> Vec<f64>, eps: f64| -> Option<f64> {
        if val_users.is_empty() {
            return None;
        }
        let total: f64 = val_users
            .iter()
            .map(|&u| cross_entropy(&dist(u), &td.data.fold_label(Fold::Validation, u), eps))
            .sum();
        Some(total / val_users.len() as f64)
    };

    let (val_ndcg_embed, val_loss_embed) = match &outputs.z {
        Some(z) => (
            Some(evaluate(ModelKind::Embedding, Fold::Validation, &ks, td.data, |u| z[u].clone()).ndcg(k)),
            mean_val_loss(&|u| z[u].clone(), 0.0),
        ),
        None => (None, None),
    };
    let (val_ndcg_path, val_loss_path) = if outputs.z_prime.is_some() {
        (
            Some(
                evaluate(ModelKind::Path, Fold::Validation, &ks, td.data, |u| outputs.path_scores(u, num_items))
                    .ndcg(k),
            ),
            mean_val_loss(&|u| outputs.path_scores(u, num_items), LOG_EPS),
        )
    } else {
        (None, None)
    };
    Ok(EvalSnapshot {
        val_ndcg_embed,
        val_ndcg_path,
        kl_fidelity: outputs.kl_fidelity(),
        val_loss_embed,
        val_loss_path,
    })
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<LogRecord>,
    /// Evaluation of the final parameters.
    pub final_eval: EvalSnapshot,
}

/// Drives optimization for one configuration.
pub struct Trainer<'t, 'a> {
    pub td: &'t TrainData<'a>,
    pub config: TrainConfig,
    pub state: TrainState,
    all_users: Vec<usize>,
}

impl<'t, 'a> Trainer<'t, 'a> {
    pub fn new(td: &'t TrainData<'a>, config: TrainConfig, state: Option<TrainState>) -> Result<Self> {
        config.validate()?;
        let state = match state {
            Some(s) => {
                if s.mode != config.mode {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint was trained in mode {}, config asks for {}",
                        s.mode, config.mode
                    )));
                }
                if s.embed.dim != config.dim || s.path.path_logits.len() != td.paths.len() {
                    return Err(Error::Checkpoint("checkpoint shape does not match the configuration".into()));
                }
                s
            }
            None => TrainState::init(td.graph, td.paths.len(), &config),
        };
        Ok(Trainer {
            td,
            config,
            all_users: (0..td.graph.num_users()).collect(),
            state,
        })
    }

    /// Objective and routing for the current phase at iteration `t`.
    pub fn plan(&self, t: usize) -> (Objective, Routing) {
        let alpha = self.config.alpha_schedule().value(t);
        let beta = self.config.beta_schedule().value(t);
        match (self.config.mode, self.state.phase) {
            (TrainMode::BaseOnly, _) => (
                Objective {
                    alpha: 1.0,
                    beta: 0.0,
                    kl: false,
                },
                Routing {
                    embed: true,
                    path: false,
                },
            ),
            (TrainMode::Pipelined, Phase::Pretrain) => (
                Objective {
                    alpha: 0.0,
                    beta: 1.0,
                    kl: false,
                },
                Routing {
                    embed: false,
                    path: true,
                },
            ),
            (mode, _) => (
                Objective { alpha, beta, kl: true },
                Routing {
                    embed: true,
                    path: mode == TrainMode::Joint,
                },
            ),
        }
    }

    /// Users in the batch for step `t`.
    pub fn batch(&self, t: usize) -> Vec<usize> {
        let n = self.all_users.len();
        if n <= FULL_BATCH_LIMIT {
            return self.all_users.clone();
        }
        let size = self.config.batch_size.min(n);
        let per_epoch = n.div_ceil(size);
        let epoch = t / per_epoch;
        let mut order = self.all_users.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let start = (t % per_epoch) * size;
        order[start..(start + size).min(n)].to_vec()
    }

    fn path_in_use(&self) -> Option<&PathModelParams> {
        self.config.mode.uses_path_model().then_some(&self.state.path)
    }

    /// Loss and gradients at the current parameters.
    pub fn loss_at(&self, users: &[usize], objective: Objective, routing: Routing) -> Result<(LossBreakdown, Gradients)> {
        total_loss(self.td, &self.state.embed, self.path_in_use(), users, objective, routing)
    }

    /// One optimizer step with explicit objective and routing.
    pub fn step_with(&mut self, users: &[usize], objective: Objective, routing: Routing) -> Result<LossBreakdown> {
        let (loss, grads) = self.loss_at(users, objective, routing)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                iteration: self.state.iteration,
                loss: loss.total,
            });
        }
        self.apply(&grads, routing);
        self.state.iteration += 1;
        Ok(loss)
    }

    fn apply(&mut self, grads: &Gradients, routing: Routing) {
        let opt = self.config.optimizer;
        let s = &mut self.state;
        if routing.embed {
            s.embed_table_opt.step(&opt, &mut s.embed.table, &grads.embed.table);
            s.embed_weight_opt.step(&opt, &mut s.embed.out_weight, &grads.embed.out_weight);
        }
        if routing.path {
            s.rho_opt.step(&opt, &mut s.path.rho, &grads.path.rho);
            s.logit_opt.step(&opt, &mut s.path.path_logits, &grads.path.path_logits);
        }
    }

    pub fn evaluate(&self) -> Result<EvalSnapshot> {
        let embed = (self.state.phase == Phase::Main).then_some(&self.state.embed);
        evaluate_snapshot(self.td, embed, self.path_in_use(), self.config.eval_k)
    }

    fn record(&self, loss: &LossBreakdown, objective: Objective, eval: &EvalSnapshot) -> LogRecord {
        let main = self.state.phase == Phase::Main;
        LogRecord {
            phase: self.state.phase,
            iteration: self.state.iteration,
            l1: main.then_some(loss.l1),
            l2: loss.l2,
            l3: loss.l3,
            alpha: objective.alpha,
            beta: objective.beta,
            val_ndcg_embed: eval.val_ndcg_embed,
            val_ndcg_path: eval.val_ndcg_path,
            kl_fidelity: eval.kl_fidelity,
            val_loss_embed: eval.val_loss_embed,
            val_loss_path: eval.val_loss_path,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let s = &self.state;
        let finite = s.embed.is_finite() && s.path.rho.iter().chain(&s.path.path_logits).all(|x| x.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Divergence {
                iteration: s.iteration,
                loss: f64::NAN,
            })
        }
    }

    /// Path-model pre-training with early stopping on validation `L2`.
    fn pretrain(&mut self, history: &mut Vec<LogRecord>, mut on_record: impl FnMut(&LogRecord, &TrainState)) -> Result<()> {
        let mut best: Option<(f64, PathModelParams)> = None;
        let mut stale = 0;
        loop {
            let t = self.state.iteration;
            let (objective, routing) = self.plan(t);
            let users = self.batch(t);
            let done = t >= self.config.pretrain_max_iterations;
            if t.is_multiple_of(self.config.eval_every) || done {
                let (loss, _) = self.loss_at(&users, objective, Routing { embed: false, path: false })?;
                let eval = self.evaluate()?;
                let rec = self.record(&loss, objective, &eval);
                on_record(&rec, &self.state);
                history.push(rec);
                let val = eval.val_loss_path.unwrap_or(f64::INFINITY);
                match &best {
                    Some((b, _)) if val >= *b => stale += 1,
                    _ => {
                        best = Some((val, self.state.path.clone()));
                        stale = 0;
                    }
                }
                if done || stale >= self.config.pretrain_patience {
                    break;
                }
            }
            self.step_with(&users, objective, routing)?;
            self.check_finite()?;
        }
        if let Some((_, params)) = best {
            self.state.path = params;
        }
        self.state.phase = Phase::Main;
        self.state.iteration = 0;
        Ok(())
    }

    /// Runs to `max_iterations`, logging every `eval_every` steps and at the end.
    pub fn run(mut self, mut on_record: impl FnMut(&LogRecord, &TrainState)) -> Result<TrainOutcome> {
        let mut history = Vec::new();
        if self.state.phase == Phase::Pretrain {
            self.pretrain(&mut history, &mut on_record)?;
        }
        loop {
            let t = self.state.iteration;
            let (objective, routing) = self.plan(t);
            let users = self.batch(t);
            let done = t >= self.config.max_iterations;
            let log_now = t.is_multiple_of(self.config.eval_every) || done;
            if done {
                let (loss, _) = self.loss_at(&users, objective, Routing { embed: false, path: false })?;
                let eval = self.evaluate()?;
                let rec = self.record(&loss, objective, &eval);
                on_record(&rec, &self.state);
                history.push(rec);
                return Ok(TrainOutcome {
                    state: self.state,
                    history,
                    final_eval: eval,
                });
            }
            let (loss, grads) = self.loss_at(&users, objective, routing)?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    iteration: t,
                    loss: loss.total,
                });
            }
            if log_now {
                let eval = self.evaluate()?;
                let rec = self.record(&loss, objective, &eval);
                on_record(&rec, &self.state);
                history.push(rec);
            }
            self.apply(&grads, routing);
            self.state.iteration += 1;
            self.check_finite()?;
        }
    }
}

/// Trains from scratch (or from `resume`) and returns the final state and log.
pub fn train(config: &TrainConfig, td: &TrainData<'_>, resume: Option<TrainState>) -> Result<TrainOutcome> {
    Trainer::new(td, config.clone(), resume)?.run(|_, _| {})
}
