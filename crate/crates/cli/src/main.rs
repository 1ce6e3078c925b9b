use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pathdistill::checkpoint::Checkpoint;
use pathdistill::config::ExperimentConfig;
use pathdistill::experiment::{
    ablate, density_summary, evaluate_state, prepare, render_ablation, render_density_table, render_sweep, run_training,
    sweep, Prepared,
};
use pathdistill::explain::{build_report, render_json_lines, render_text};
use pathdistill::path_model::PathSnapshot;
use pathdistill::split::Fold;
use pathdistill::synth::{generate, SynthConfig};
use pathdistill::train::{ModelOutputs, TrainMode};
use pathdistill::{Error, Result};
use sha2::{Digest, Sha256};

const OUTPUT_ENV: &str = "PATHDISTILL_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "pathdistill", version, about = "Meta-path distillation for recommendation")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides `output_dir` from the config.
    #[arg(long, global = true, env = OUTPUT_ENV)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FoldArg {
    Validation,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the data, split it and write the split manifest.
    Prepare,
    /// Train one model and write its log and checkpoint.
    Train {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Rank held-out items with a trained checkpoint.
    Evaluate {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        fold: FoldArg,
    },
    /// Explain the top recommendations of some users.
    Explain {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        beam_width: Option<usize>,
        /// Recommendations explained per user.
        #[arg(long)]
        topk: Option<usize>,
        /// User ids; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        users: Vec<String>,
    },
    /// Train all four modes on one split and compare them.
    Ablate {
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare base_only and joint at several train ratios.
    Sweep {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
    },
    /// Write a synthetic dataset as TSV files.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

struct Context {
    config: ExperimentConfig,
    output: PathBuf,
}

fn load_context(cli: &Cli) -> Result<Context> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let config = ExperimentConfig::load(path)?;
    let output = cli.output_dir.clone().unwrap_or_else(|| config.output_dir.clone());
    Ok(Context { config, output })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}

/// Stdout writes that tolerate a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn parse_mode(mode: Option<&str>, default: TrainMode) -> Result<TrainMode> {
    mode.map_or(Ok(default), str::parse)
}

fn run_dir(output: &Path, mode: TrainMode, seed: u64) -> PathBuf {
    output.join("runs").join(format!("{mode}-seed{seed}"))
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Generate { out, users, items, seed } = &cli.command {
        let defaults = SynthConfig::default();
        let config = SynthConfig {
            users: users.unwrap_or(defaults.users),
            items: items.unwrap_or(defaults.items),
            seed: seed.unwrap_or(defaults.seed),
            ..defaults
        };
        let ds = generate(&config)?;
        ds.write_tsv(out)?;
        say!("wrote {} interactions to {}", ds.interactions.len(), out.display());
        return Ok(());
    }

    let ctx = load_context(&cli)?;
    match cli.command {
        Command::Prepare => cmd_prepare(&ctx),
        Command::Train { mode, seed, resume } => cmd_train(&ctx, mode.as_deref(), seed, resume.as_deref()),
        Command::Evaluate {
            mode,
            seed,
            checkpoint,
            fold,
        } => cmd_evaluate(&ctx, mode.as_deref(), seed, checkpoint, fold),
        Command::Explain {
            mode,
            seed,
            checkpoint,
            beam_width,
            topk,
            users,
        } => cmd_explain(&ctx, mode.as_deref(), seed, checkpoint, beam_width, topk, users),
        Command::Ablate { seed } => cmd_ablate(&ctx, seed),
        Command::Sweep { seed, ratios } => cmd_sweep(&ctx, seed, ratios),
        Command::Generate { .. } => unreachable!("handled above"),
    }
}

fn cmd_prepare(ctx: &Context) -> Result<()> {
    let prepared = prepare(&ctx.config)?;
    let manifest = serde_json::to_vec_pretty(&prepared.manifest)?;
    let manifest_path = ctx.output.join("split_manifest.json");
    write_file(&manifest_path, &manifest)?;
    let summary = density_summary(&prepared.graph);
    write_file(&ctx.output.join("graph_summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    emit(&render_density_table(&summary));
    say!(
        "users {}  items {}  train {}  meta-paths {}",
        prepared.graph.num_users(),
        prepared.graph.num_items(),
        prepared.data.num_train(),
        prepared.paths.len()
    );
    say!("manifest {} sha256 {}", manifest_path.display(), sha256_hex(&manifest));
    Ok(())
}

fn cmd_train(ctx: &Context, mode: Option<&str>, seed: Option<u64>, resume: Option<&Path>) -> Result<()> {
    let mut train = ctx.config.train.clone();
    train.mode = parse_mode(mode, train.mode)?;
    train.seed = seed.unwrap_or(train.seed);
    let prepared = prepare(&ctx.config)?;
    let start = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_compatible(&prepared.train_graph, &ctx.config.meta_paths)?;
            Some(ck.state)
        }
        None => None,
    };

    let dir = run_dir(&ctx.output, train.mode, train.seed);
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let log_path = dir.join("log.jsonl");
    let checkpoint_path = dir.join("checkpoint.json");
    let mut log = Vec::new();
    let mut write_error = None;
    let outcome = run_training(&prepared, &train, start, |record, state| {
        let line = serde_json::to_string(record).expect("log records serialize");
        say!("{line}");
        log.extend_from_slice(line.as_bytes());
        log.push(b'\n');
        let ck = Checkpoint::new(&prepared.train_graph, &ctx.config.meta_paths, state.clone());
        if let Err(e) = ck.save(&checkpoint_path) {
            write_error.get_or_insert(e);
        }
    });
    write_file(&log_path, &log)?;
    let outcome = outcome?;
    if let Some(e) = write_error {
        return Err(e);
    }
    Checkpoint::new(&prepared.train_graph, &ctx.config.meta_paths, outcome.state).save(&checkpoint_path)?;
    say!("log {} sha256 {}", log_path.display(), sha256_hex(&log));
    say!("checkpoint {}", checkpoint_path.display());
    Ok(())
}

fn load_checkpoint(
    ctx: &Context,
    prepared: &Prepared,
    mode: Option<&str>,
    seed: Option<u64>,
    path: Option<PathBuf>,
) -> Result<Checkpoint> {
    let path = match path {
        Some(p) => p,
        None => {
            let mode = parse_mode(mode, ctx.config.train.mode)?;
            run_dir(&ctx.output, mode, seed.unwrap_or(ctx.config.train.seed)).join("checkpoint.json")
        }
    };
    let ck = Checkpoint::load(&path)?;
    ck.check_compatible(&prepared.train_graph, &ctx.config.meta_paths)?;
    Ok(ck)
}

fn cmd_evaluate(ctx: &Context, mode: Option<&str>, seed: Option<u64>, checkpoint: Option<PathBuf>, fold: FoldArg) -> Result<()> {
    let prepared = prepare(&ctx.config)?;
    let ck = load_checkpoint(ctx, &prepared, mode, seed, checkpoint)?;
    let fold = match fold {
        FoldArg::Validation => Fold::Validation,
        FoldArg::Test => Fold::Test,
    };
    let results = evaluate_state(&prepared, &ck.state, fold, &ctx.config.k_list)?;
    for r in &results {
        let cols: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        say!("{:<10} users={} {}", format!("{:?}", r.model).to_lowercase(), r.users, cols.join(" "));
    }
    let name = format!("eval_{}_{}.json", ck.state.mode, if fold == Fold::Test { "test" } else { "validation" });
    write_file(&ctx.output.join(name), &serde_json::to_vec_pretty(&results)?)?;
    Ok(())
}

fn cmd_explain(
    ctx: &Context,
    mode: Option<&str>,
    seed: Option<u64>,
    checkpoint: Option<PathBuf>,
    beam_width: Option<usize>,
    topk: Option<usize>,
    users: Vec<String>,
) -> Result<()> {
    let prepared = prepare(&ctx.config)?;
    let ck = load_checkpoint(ctx, &prepared, mode, seed, checkpoint)?;
    let cfg = &ctx.config.explain;
    let mut options = cfg.options();
    if let Some(b) = beam_width {
        options.beam_width = b;
    }
    let top_n = topk.unwrap_or(cfg.top_n);
    let ids = if users.is_empty() { cfg.users.clone() } else { users };
    let graph = &prepared.train_graph;
    let user_indices: Vec<usize> = if ids.is_empty() {
        (0..graph.num_users().min(cfg.max_users)).collect()
    } else {
        ids.iter()
            .map(|id| {
                graph
                    .users()
                    .index_of(id)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown user `{id}`")))
            })
            .collect::<Result<_>>()?
    };

    let td = prepared.train_data();
    let outputs = ModelOutputs::compute(&td, Some(&ck.state.embed), None)?;
    let z = outputs.z.expect("embedding scores");
    let snapshot = PathSnapshot::new(&ck.state.path, graph, &prepared.paths);
    let report = build_report(&snapshot, &prepared.data, &user_indices, top_n, &options, |u| z[u].clone())?;
    emit(&render_text(&report));
    write_file(&ctx.output.join("explanations.jsonl"), render_json_lines(&report)?.as_bytes())?;
    write_file(&ctx.output.join("explanations.json"), &serde_json::to_vec_pretty(&report)?)?;
    Ok(())
}

fn cmd_ablate(ctx: &Context, seed: Option<u64>) -> Result<()> {
    let prepared = prepare(&ctx.config)?;
    let seeds = seed.map_or_else(|| ctx.config.seeds.clone(), |s| vec![s]);
    let report = ablate(&prepared, &ctx.config.train, &seeds, |r| {
        eprintln!("{} seed {}: {}", r.mode, r.seed, r.error.as_deref().unwrap_or("ok"));
    });
    emit(&render_ablation(&report));
    write_file(&ctx.output.join("ablation.json"), &serde_json::to_vec_pretty(&report)?)?;
    Ok(())
}

fn cmd_sweep(ctx: &Context, seed: Option<u64>, ratios: Vec<f64>) -> Result<()> {
    let prepared = prepare(&ctx.config)?;
    let seeds = seed.map_or_else(|| ctx.config.seeds.clone(), |s| vec![s]);
    let ratios = if ratios.is_empty() { ctx.config.sweep.ratios.clone() } else { ratios };
    if ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::Config("sweep ratios must lie in (0, 1]".into()));
    }
    let report = sweep(&prepared, &ctx.config.train, &ratios, &seeds, |ratio, r| {
        eprintln!("ratio {ratio} {} seed {}: {}", r.mode, r.seed, r.error.as_deref().unwrap_or("ok"));
    })?;
    emit(&render_sweep(&report));
    write_file(&ctx.output.join("sweep.json"), &serde_json::to_vec_pretty(&report)?)?;
    Ok(())
}
