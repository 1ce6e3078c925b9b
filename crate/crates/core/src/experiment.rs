//! Orchestration shared by the command-line tool and the acceptance tests:
//! data preparation, single runs, the four-mode ablation and the train-ratio
//! sweep.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::graph::HinGraph;
use crate::metapath::{parse_all, MetaPath};
use crate::metrics::{evaluate, itempop_baseline, EvalResult, ModelKind};
use crate::split::{split_interactions, Fold, InteractionData, SplitManifest};
use crate::train::{LogRecord, ModelOutputs, TrainConfig, TrainData, TrainMode, TrainOutcome, TrainState, Trainer};
use crate::Result;

/// Graph, split and meta-paths for one experiment.
pub struct Prepared {
    /// Every interaction, used for id maps and density reporting.
    pub graph: HinGraph,
    /// Interaction relation restricted to train pairs.
    pub train_graph: HinGraph,
    pub data: InteractionData,
    pub paths: Vec<MetaPath>,
    pub manifest: SplitManifest,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let graph = config.load_graph()?;
    let split = &config.dataset;
    let data = split_interactions(&graph, split.split, split.split_seed)?;
    let manifest = data.to_manifest(&graph, split.split_seed, split.split);
    let train_graph = data.train_graph(&graph);
    let paths = parse_all(&config.meta_paths, &train_graph)?;
    Ok(Prepared {
        graph,
        train_graph,
        data,
        paths,
        manifest,
    })
}

impl Prepared {
    pub fn train_data(&self) -> TrainData<'_> {
        TrainData::new(&self.train_graph, &self.data, &self.paths)
    }

    /// Same graph and held-out folds with a thinned train fold.
    pub fn with_train_fraction(&self, fraction: f64, seed: u64) -> Result<Prepared> {
        let data = self.data.subsample_train(fraction, seed)?;
        let train_graph = data.train_graph(&self.graph);
        let paths = self
            .paths
            .iter()
            .map(|p| MetaPath::from_steps(&train_graph, p.steps().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared {
            graph: self.graph.clone(),
            manifest: data.to_manifest(&self.graph, self.manifest.seed, self.manifest.ratios),
            train_graph,
            data,
            paths,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSummary {
    pub name: String,
    pub src: String,
    pub dst: String,
    pub src_count: usize,
    pub dst_count: usize,
    pub edges: usize,
    /// `edges / (src_count · dst_count)`.
    pub density: f64,
}

pub fn density_summary(graph: &HinGraph) -> Vec<RelationSummary> {
    graph
        .relations()
        .iter()
        .map(|r| {
            let src_count = graph.node_type(r.src_type()).len();
            let dst_count = graph.node_type(r.dst_type()).len();
            let cells = (src_count * dst_count) as f64;
            RelationSummary {
                name: r.name().to_owned(),
                src: graph.node_type(r.src_type()).name().to_owned(),
                dst: graph.node_type(r.dst_type()).name().to_owned(),
                src_count,
                dst_count,
                edges: r.len(),
                density: if cells > 0.0 { r.len() as f64 / cells } else { 0.0 },
            }
        })
        .collect()
}

pub fn render_density_table(rows: &[RelationSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>10} {:>10} {:>10} {:>10}",
        "relation", "#A", "#B", "#A-B", "density"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>10} {:>10} {:>9.3}%",
            format!("{}-{}", r.src, r.dst),
            r.src_count,
            r.dst_count,
            r.edges,
            100.0 * r.density
        );
    }
    out
}

/// Runs one training job on a prepared experiment.
pub fn run_training(
    prepared: &Prepared,
    config: &TrainConfig,
    resume: Option<TrainState>,
    on_record: impl FnMut(&LogRecord, &TrainState),
) -> Result<TrainOutcome> {
    let td = prepared.train_data();
    Trainer::new(&td, config.clone(), resume)?.run(on_record)
}

/// Metrics of every model available in `state` on `fold`, plus item popularity.
pub fn evaluate_state(prepared: &Prepared, state: &TrainState, fold: Fold, k_list: &[usize]) -> Result<Vec<EvalResult>> {
    let td = prepared.train_data();
    let path = state.mode.uses_path_model().then_some(&state.path);
    let outputs = ModelOutputs::compute(&td, Some(&state.embed), path)?;
    let data = &prepared.data;
    let num_items = data.num_items();
    let z = outputs.z.as_ref().expect("embedding scores");
    let mut results = vec![evaluate(ModelKind::Embedding, fold, k_list, data, |u| z[u].clone())];
    if path.is_some() {
        results.push(evaluate(ModelKind::Path, fold, k_list, data, |u| outputs.path_scores(u, num_items)));
    }
    let pop = itempop_baseline(data)?;
    results.push(evaluate(ModelKind::ItemPop, fold, k_list, data, |_| pop.clone()));
    Ok(results)
}

/// Final validation numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: TrainMode,
    pub seed: u64,
    pub ndcg_embed: Option<f64>,
    pub ndcg_path: Option<f64>,
    pub kl_fidelity: Option<f64>,
    pub error: Option<String>,
}

fn run_one(prepared: &Prepared, base: &TrainConfig, mode: TrainMode, seed: u64) -> RunResult {
    let config = TrainConfig {
        mode,
        seed,
        ..base.clone()
    };
    match run_training(prepared, &config, None, |_, _| {}) {
        Ok(outcome) => RunResult {
            mode,
            seed,
            ndcg_embed: outcome.final_eval.val_ndcg_embed,
            ndcg_path: outcome.final_eval.val_ndcg_path,
            kl_fidelity: outcome.final_eval.kl_fidelity,
            error: None,
        },
        Err(e) => RunResult {
            mode,
            seed,
            ndcg_embed: None,
            ndcg_path: None,
            kl_fidelity: None,
            error: Some(e.to_string()),
        },
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn improvement(value: Option<f64>, base: Option<f64>) -> Option<f64> {
    match (value, base) {
        (Some(v), Some(b)) if b > 0.0 => Some((v - b) / b),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: TrainMode,
    /// Seed means over successful runs.
    pub ndcg_embed: Option<f64>,
    pub ndcg_path: Option<f64>,
    pub kl_fidelity: Option<f64>,
    /// Relative gain of `ndcg_embed` over the `base_only` row.
    pub improvement: Option<f64>,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub k: usize,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<RunResult>,
}

impl AblationReport {
    pub fn row(&self, mode: TrainMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

/// Trains all four modes for every seed on one shared split.
pub fn ablate(prepared: &Prepared, base: &TrainConfig, seeds: &[u64], mut progress: impl FnMut(&RunResult)) -> AblationReport {
    let mut runs = Vec::new();
    for &seed in seeds {
        for mode in TrainMode::ALL {
            let r = run_one(prepared, base, mode, seed);
            progress(&r);
            runs.push(r);
        }
    }
    let mut rows: Vec<AblationRow> = TrainMode::ALL
        .into_iter()
        .map(|mode| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.mode == mode).collect();
            AblationRow {
                mode,
                ndcg_embed: mean(mine.iter().map(|r| r.ndcg_embed)),
                ndcg_path: mean(mine.iter().map(|r| r.ndcg_path)),
                kl_fidelity: mean(mine.iter().map(|r| r.kl_fidelity)),
                improvement: None,
                failed_runs: mine.iter().filter(|r| r.error.is_some()).count(),
            }
        })
        .collect();
    let base_ndcg = rows[0].ndcg_embed;
    for row in &mut rows {
        row.improvement = improvement(row.ndcg_embed, base_ndcg);
    }
    AblationReport {
        k: base.eval_k,
        rows,
        runs,
    }
}

fn cell(v: Option<f64>, width: usize) -> String {
    match v {
        Some(x) => format!("{x:>width$.4}"),
        None => format!("{:>width$}", "-"),
    }
}

fn percent(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:>+9.1}%", 100.0 * x),
        None => format!("{:>10}", "-"),
    }
}

pub fn render_ablation(report: &AblationReport) -> String {
    let mut out = String::new();
    let k = report.k;
    let _ = writeln!(
        out,
        "{:<12} {:>12} {:>12} {:>10} {:>10}",
        "mode",
        format!("ndcg@{k}"),
        format!("path@{k}"),
        "kl",
        "improv."
    );
    for r in &report.rows {
        let _ = write!(
            out,
            "{:<12} {} {} {} {}",
            r.mode.as_str(),
            cell(r.ndcg_embed, 12),
            cell(r.ndcg_path, 12),
            cell(r.kl_fidelity, 10),
            percent(r.improvement)
        );
        if r.failed_runs > 0 {
            let _ = write!(out, "  FAILED x{}", r.failed_runs);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    /// Density of the train interaction relation.
    pub density: f64,
    pub ndcg_base: Option<f64>,
    pub ndcg_joint: Option<f64>,
    /// `(joint - base) / base`.
    pub improvement: Option<f64>,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub k: usize,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<(f64, RunResult)>,
}

/// Trains `base_only` and `joint` on nested thinnings of the train fold.
/// Validation and test folds stay fixed.
pub fn sweep(
    prepared: &Prepared,
    base: &TrainConfig,
    ratios: &[f64],
    seeds: &[u64],
    mut progress: impl FnMut(f64, &RunResult),
) -> Result<SweepReport> {
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let cells = (prepared.graph.num_users() * prepared.graph.num_items()) as f64;
    for &ratio in ratios {
        let thinned = prepared.with_train_fraction(ratio, prepared.manifest.seed)?;
        let mut mine = Vec::new();
        for &seed in seeds {
            for mode in [TrainMode::BaseOnly, TrainMode::Joint] {
                let r = run_one(&thinned, base, mode, seed);
                progress(ratio, &r);
                mine.push(r);
            }
        }
        let of = |mode: TrainMode| mean(mine.iter().filter(|r| r.mode == mode).map(|r| r.ndcg_embed));
        let (b, j) = (of(TrainMode::BaseOnly), of(TrainMode::Joint));
        rows.push(SweepRow {
            ratio,
            density: thinned.data.num_train() as f64 / cells,
            ndcg_base: b,
            ndcg_joint: j,
            improvement: improvement(j, b),
            failed_runs: mine.iter().filter(|r| r.error.is_some()).count(),
        });
        runs.extend(mine.into_iter().map(|r| (ratio, r)));
    }
    Ok(SweepReport {
        k: base.eval_k,
        rows,
        runs,
    })
}

pub fn render_sweep(report: &SweepReport) -> String {
    let mut out = String::new();
    let k = report.k;
    let _ = writeln!(
        out,
        "{:>6} {:>9} {:>12} {:>12} {:>10}",
        "ratio",
        "density",
        format!("base@{k}"),
        format!("joint@{k}"),
        "improv."
    );
    for r in &report.rows {
        let _ = write!(
            out,
            "{:>6.2} {:>8.3}% {} {} {}",
            r.ratio,
            100.0 * r.density,
            cell(r.ndcg_base, 12),
            cell(r.ndcg_joint, 12),
            percent(r.improvement)
        );
        if r.failed_runs > 0 {
            let _ = write!(out, "  FAILED x{}", r.failed_runs);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
            meta_paths = [
                "user -click-> item <-click- user -click-> item",
                "user -click-> item -has_genre-> genre <-has_genre- item",
            ]
            [dataset.synthetic]
            users = 30
            items = 20
            clicks_per_user = 6
            [train]
            dim = 4
            max_iterations = 6
            eval_every = 3
            pretrain_max_iterations = 4
            "#,
        )
        .unwrap()
    }

    #[test]
    fn density_summary_lists_every_relation() {
        let p = prepare(&config()).unwrap();
        let rows = density_summary(&p.graph);
        assert_eq!(rows.len(), 3);
        let click = &rows[0];
        assert_eq!(click.edges, p.graph.interaction_relation().len());
        assert!((click.density - click.edges as f64 / (click.src_count * click.dst_count) as f64).abs() < 1e-15);
        assert!(render_density_table(&rows).contains("item-genre"));
    }

    #[test]
    fn ablation_has_four_rows_and_a_zero_base() {
        let c = config();
        let p = prepare(&c).unwrap();
        let report = ablate(&p, &c.train, &[0], |_| {});
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.row(TrainMode::BaseOnly).unwrap().improvement, Some(0.0));
        assert!(report.row(TrainMode::BaseOnly).unwrap().ndcg_path.is_none());
        assert!(report.row(TrainMode::Unlearnable).unwrap().ndcg_path.is_some());
        let text = render_ablation(&report);
        assert!(text.contains("+0.0%"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn failed_runs_are_marked() {
        let c = config();
        let p = prepare(&c).unwrap();
        let bad = TrainConfig {
            optimizer: crate::optim::AdamConfig {
                learning_rate: 1e300,
                ..Default::default()
            },
            ..c.train.clone()
        };
        let report = ablate(&p, &bad, &[0], |_| {});
        assert!(report.rows.iter().any(|r| r.failed_runs > 0));
        assert!(render_ablation(&report).contains("FAILED"));
    }

    #[test]
    fn sweep_densities_scale_with_ratio() {
        let c = config();
        let p = prepare(&c).unwrap();
        let report = sweep(&p, &c.train, &[0.4, 0.6, 0.8], &[0], |_, _| {}).unwrap();
        assert_eq!(report.rows.len(), 3);
        let full = p.data.num_train() as f64 / (p.graph.num_users() * p.graph.num_items()) as f64;
        for row in &report.rows {
            // Flooring with a one-item minimum per user keeps the ratio within a user's worth of rounding.
            let err = (row.density - row.ratio * full).abs();
            assert!(err <= p.graph.num_users() as f64 / (p.graph.num_users() * p.graph.num_items()) as f64);
            if let (Some(j), Some(b), Some(imp)) = (row.ndcg_joint, row.ndcg_base, row.improvement) {
                assert!((imp - (j - b) / b).abs() < 1e-12);
            }
        }
        assert!(report.rows[0].density < report.rows[2].density);
    }

    #[test]
    fn evaluation_covers_every_model() {
        let c = config();
        let p = prepare(&c).unwrap();
        let outcome = run_training(&p, &c.train, None, |_, _| {}).unwrap();
        let results = evaluate_state(&p, &outcome.state, Fold::Test, &c.k_list).unwrap();
        let kinds: Vec<ModelKind> = results.iter().map(|r| r.model).collect();
        assert_eq!(kinds, vec![ModelKind::Embedding, ModelKind::Path, ModelKind::ItemPop]);
    }
}
