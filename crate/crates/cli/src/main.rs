//! `kgplan`: command-line front end for graph construction, group mining,
//! Q-model training, plan extraction, verification and benchmarks.

use clap::{Args, Parser, Subcommand};
use kgplan_core::bench::{
    run_bench, summarize, write_bench_csv, BenchAxis, BenchError, BenchSpec, QfSpec,
};
use kgplan_core::groups::{install_groups, mine_groups, GroupError, MergeRule, PathCorpus};
use kgplan_core::hashing::derive_seed;
use kgplan_core::io::{
    load_trajectories, read_jsonl, save_trajectories, write_json, write_jsonl, FormatError,
};
use kgplan_core::kg::{
    merge_trajectory, DedupConfig, DescriptorEquals, KgError, KnowledgeGraph, TemplateProvider,
    SCHEMA_VERSION,
};
use kgplan_core::mcts::{
    extract, top1_success, ExactOracle, MctsConfig, MctsError, NoiseMode, NoisyOracle, QFunction,
    Strategy,
};
use kgplan_core::mdp::{KgMdp, MdpError};
use kgplan_core::pipeline::{
    run_round, write_round_csv, PipelineConfig, PipelineError, PlanningSpace, RoundReport,
};
use kgplan_core::scorer::{
    build_preference_pairs, init_train, refine_train, FeatureEncoder, PreferencePair, QScorer,
    ScorerError, TrainConfig, TrainSample,
};
use kgplan_core::sim::{
    dfs_explore, generate_env, ExploreConfig, SimError, SynthEnv, SynthEnvConfig, Task,
};
use kgplan_core::verify::{verify_graph, write_verify_csv, VerifyConfig};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "kgplan", version, about = "Knowledge-graph planning toolkit")]
struct Cli {
    /// JSON file with per-subcommand defaults, e.g. {"extract": {"iters": 100}}.
    /// Flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic environment with tasks.
    GenEnv(GenEnvArgs),
    /// Simulated depth-first exploration; writes trajectories.
    Explore(ExploreArgs),
    /// Merge trajectory files into a knowledge graph.
    BuildKg(BuildKgArgs),
    /// Mine action groups and install them into the graph.
    MineGroups(MineGroupsArgs),
    /// Warm up a Q-model on preference pairs.
    InitTrain(InitTrainArgs),
    /// Refine a Q-model on Bellman-target samples.
    RefineTrain(RefineTrainArgs),
    /// Run self-training rounds.
    SelfTrain(SelfTrainArgs),
    /// Extract ranked plans for one task.
    Extract(ExtractArgs),
    /// Greedy-optimality and rollout checks on a graph.
    Verify(VerifyArgs),
    /// Ablation sweep to CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenEnvArgs {
    /// Branching factor.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    /// Number of tasks, each with its own goal.
    #[arg(long, default_value_t = 1)]
    goals: usize,
    #[arg(long, default_value_t = 0.0)]
    merge_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    terminal_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    chain_prob: f64,
    #[arg(long)]
    max_level_width: Option<usize>,
    #[arg(long, default_value_t = 32)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long)]
    env: PathBuf,
    /// Task id, or `all`. May be repeated.
    #[arg(long, required = true)]
    task: Vec<String>,
    /// Sub-goals tried per state.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    max_depth: usize,
    #[arg(long, default_value_t = 200)]
    budget: usize,
    #[arg(long, default_value_t = 0.0)]
    p_flip: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildKgArgs {
    /// Trajectory files (one JSON trajectory per line). May be repeated.
    #[arg(long, required = true)]
    trajectories: Vec<PathBuf>,
    #[arg(long, default_value_t = 32)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.95)]
    tau_coarse: f64,
    #[arg(long, default_value_t = 0.5)]
    tau_iou: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineGroupsArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 3)]
    delta_f: usize,
    #[arg(long, default_value_t = 10_000)]
    path_cap: usize,
    /// Rule list.
    #[arg(long)]
    out: PathBuf,
    /// Graph with groups installed; defaults to `<out>.graph.json`.
    #[arg(long)]
    graph_out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelShape {
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    dim: usize,
}

#[derive(Args)]
struct InitTrainArgs {
    /// Preference pairs (one JSON pair per line).
    #[arg(long, required_unless_present = "env", conflicts_with = "env")]
    pairs: Option<PathBuf>,
    /// Build pairs from the reference paths of the environment's training tasks.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Graph the pairs are read from; defaults to the environment's truth.
    #[arg(long, requires = "env")]
    graph: Option<PathBuf>,
    /// Tasks held out for evaluation (the last ones); defaults to a third.
    #[arg(long)]
    eval: Option<usize>,
    /// Also write the pairs used.
    #[arg(long)]
    pairs_out: Option<PathBuf>,
    #[command(flatten)]
    shape: ModelShape,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefineTrainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training samples (one JSON sample per line).
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    /// M
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Exploration constant.
    #[arg(long, default_value_t = 10.0)]
    c: f64,
    #[arg(long, default_value_t = 5)]
    topk: usize,
}

impl SearchArgs {
    fn config(&self, seed: u64) -> MctsConfig {
        MctsConfig {
            iterations: self.iters,
            exploration: self.c,
            top_k: self.topk,
            seed,
        }
    }
}

#[derive(Args)]
struct SelfTrainArgs {
    #[arg(long)]
    env: PathBuf,
    /// Graph to plan on; defaults to the environment's truth.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Initial checkpoint; without one a fresh model is warmed up first.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    shape: ModelShape,
    #[arg(long, default_value_t = 4)]
    rounds: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long)]
    eval: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// Graph to plan on; defaults to the environment's truth.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Environment holding the task definitions.
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long, default_value = "mcts")]
    strategy: Strategy,
    #[command(flatten)]
    search: SearchArgs,
    /// Q-model checkpoint; the exact oracle is used without one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Bounded random bias added to the exact oracle.
    #[arg(long, conflicts_with = "model")]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 10_000)]
    rollouts: usize,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-instance CSV.
    #[arg(long)]
    out: PathBuf,
    /// Full report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    axis: BenchAxis,
    /// Comma-separated axis values; the axis defaults otherwise.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    #[arg(long, default_value_t = 10)]
    instances: usize,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    goals: usize,
    #[arg(long, default_value_t = 0.0)]
    merge_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    chain_prob: f64,
    #[arg(long)]
    max_level_width: Option<usize>,
    #[arg(long, default_value_t = 0)]
    env_seed: u64,
    /// exact, noisy or model.
    #[arg(long, default_value = "noisy")]
    qf: String,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 32)]
    model_width: usize,
    #[arg(long, default_value_t = 5)]
    model_epochs: usize,
    #[arg(long, default_value = "mcts")]
    strategy: Strategy,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-value means as CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Schema(String),
    Format(String),
    Invalid(String),
    Runtime(String),
    VerifyFailed(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Schema(_) => "schema_mismatch",
            CliError::Format(_) => "format",
            CliError::Invalid(_) => "invalid_argument",
            CliError::Runtime(_) => "runtime",
            CliError::VerifyFailed(_) => "verification_failed",
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::VerifyFailed(_) => 1,
            CliError::Io(_) => 3,
            CliError::Schema(_) => 4,
            CliError::Format(_) => 5,
            CliError::Invalid(_) => 6,
            CliError::Runtime(_) => 7,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m)
            | CliError::Schema(m)
            | CliError::Format(m)
            | CliError::Invalid(m)
            | CliError::Runtime(m)
            | CliError::VerifyFailed(m) => m,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io { .. } => CliError::Io(e.to_string()),
            FormatError::SchemaMismatch { .. } => CliError::Schema(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(
    KgError,
    GroupError,
    MdpError,
    MctsError,
    ScorerError,
    csv::Error
);

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::UnknownTask(_) | SimError::ZeroBudget => {
                CliError::Invalid(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::EmptyBatch | PipelineError::Config(_) => {
                CliError::Invalid(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Spec(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn error_line(kind: &str, code: u8, message: &str) -> String {
    serde_json::json!({ "error": kind, "exit_code": code, "message": message }).to_string()
}

/// Appends `--key value` for every config entry of the chosen subcommand
/// whose flag is not already on the command line.
fn apply_config(mut argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(pos) = argv
        .iter()
        .position(|a| a == "--config" || a.starts_with("--config="))
    else {
        return Ok(argv);
    };
    let path = if let Some(v) = argv[pos].strip_prefix("--config=") {
        v.to_string()
    } else {
        argv.get(pos + 1)
            .cloned()
            .ok_or_else(|| CliError::Invalid("--config needs a file".into()))?
    };
    let text =
        fs::read_to_string(&path).map_err(|e| CliError::Io(format!("i/o error on {path}: {e}")))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Format(format!("config {path}: {e}")))?;
    let skip = if argv[pos].contains('=') {
        pos
    } else {
        pos + 1
    };
    let sub = argv
        .iter()
        .enumerate()
        .skip(1)
        .find(|(i, a)| *i != pos && *i != skip && !a.starts_with('-'))
        .map(|(_, a)| a.clone());
    let Some(section) = sub
        .as_deref()
        .and_then(|s| doc.get(s))
        .and_then(|v| v.as_object())
    else {
        return Ok(argv);
    };
    for (key, value) in section {
        let flag = format!("--{}", key.replace('_', "-"));
        if argv
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
        {
            continue;
        }
        let scalar = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => Ok(s.clone()),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            _ => Err(CliError::Invalid(format!(
                "config value for `{key}` must be a string, number, bool or list"
            ))),
        };
        match value {
            serde_json::Value::Bool(true) => argv.push(flag),
            serde_json::Value::Bool(false) => {}
            serde_json::Value::Array(items) => {
                for v in items {
                    argv.push(flag.clone());
                    argv.push(scalar(v)?);
                }
            }
            v => {
                argv.push(flag);
                argv.push(scalar(v)?);
            }
        }
    }
    Ok(argv)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match apply_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), e.code(), e.message()));
            return ExitCode::from(e.code());
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            let first = e.to_string().lines().next().unwrap_or("").to_string();
            eprintln!(
                "{}",
                error_line("usage", 2, first.trim_start_matches("error: "))
            );
            return ExitCode::from(2);
        }
    };
    let _ = cli.config;
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), e.code(), e.message()));
            ExitCode::from(e.code())
        }
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::GenEnv(a) => gen_env(a),
        Cmd::Explore(a) => explore(a),
        Cmd::BuildKg(a) => build_kg(a),
        Cmd::MineGroups(a) => mine(a),
        Cmd::InitTrain(a) => init(a),
        Cmd::RefineTrain(a) => refine(a),
        Cmd::SelfTrain(a) => self_train(a),
        Cmd::Extract(a) => extract_cmd(a),
        Cmd::Verify(a) => verify(a),
        Cmd::Bench(a) => bench(a),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string(value).expect("serializable summary")
    );
}

fn gen_env(a: GenEnvArgs) -> Result<(), CliError> {
    let env = generate_env(&SynthEnvConfig {
        branching: a.k,
        depth: a.depth,
        goal_count: a.goals,
        dag_merge_prob: a.merge_prob,
        terminal_prob: a.terminal_prob,
        chain_prob: a.chain_prob,
        max_level_width: a.max_level_width,
        feature_dim: a.feature_dim,
        seed: a.seed,
    })?;
    env.save(&a.out)?;
    print_json(&serde_json::json!({
        "states": env.truth.state_count(),
        "actions": env.truth.action_count(),
        "tasks": env.tasks.len(),
        "horizon": env.horizon,
    }));
    Ok(())
}

fn pick_tasks<'a>(env: &'a SynthEnv, ids: &[String]) -> Result<Vec<&'a Task>, CliError> {
    if ids.iter().any(|t| t == "all") {
        return Ok(env.tasks.iter().collect());
    }
    ids.iter()
        .map(|id| env.task(id).map_err(CliError::from))
        .collect()
}

fn explore(a: ExploreArgs) -> Result<(), CliError> {
    let env = SynthEnv::load(&a.env)?;
    let mut trajectories = Vec::new();
    let mut summary = Vec::new();
    for (i, task) in pick_tasks(&env, &a.task)?.into_iter().enumerate() {
        let r = dfs_explore(
            &env,
            task,
            &ExploreConfig {
                k: a.k,
                max_depth: a.max_depth,
                budget: a.budget,
                p_flip: a.p_flip,
                seed: derive_seed(a.seed, i as u64),
            },
        )?;
        summary.push(serde_json::json!({
            "task": task.id,
            "trajectories": r.trajectories.len(),
            "steps": r.steps,
            "budget_exhausted": r.budget_exhausted,
        }));
        trajectories.extend(r.trajectories);
    }
    save_trajectories(&a.out, &trajectories)?;
    print_json(&summary);
    Ok(())
}

fn build_kg(a: BuildKgArgs) -> Result<(), CliError> {
    let cfg = DedupConfig::new(a.tau_coarse, a.tau_iou, Arc::new(DescriptorEquals))
        .map_err(CliError::Invalid)?;
    let mut g = KnowledgeGraph::new(a.feature_dim)?;
    let mut dropped = 0;
    let mut merged = 0;
    for path in &a.trajectories {
        for t in load_trajectories(path)? {
            let r = merge_trajectory(&mut g, &t, &cfg, &TemplateProvider)?;
            dropped += r.dropped_edges.len();
            merged += r.merged_states;
        }
    }
    let violations = g.validate();
    if !violations.is_empty() {
        return Err(CliError::Runtime(format!(
            "built graph is invalid: {violations:?}"
        )));
    }
    g.save(&a.out)?;
    print_json(&serde_json::json!({
        "states": g.state_count(),
        "actions": g.action_count(),
        "merged_states": merged,
        "dropped_edges": dropped,
    }));
    Ok(())
}

#[derive(Serialize)]
struct RulesDoc<'a> {
    schema_version: u32,
    delta_f: usize,
    rules: &'a [MergeRule],
    installed: &'a [String],
    skipped: &'a [String],
}

fn mine(a: MineGroupsArgs) -> Result<(), CliError> {
    let g = KnowledgeGraph::load(&a.graph)?;
    let corpus = PathCorpus::from_graph(&g, a.path_cap);
    let rules = match mine_groups(&corpus, a.delta_f) {
        Ok(r) => r,
        Err(GroupError::NoPairs) => Vec::new(),
        Err(GroupError::ZeroThreshold) => {
            return Err(CliError::Invalid("delta-f must be at least 1".into()))
        }
        Err(e) => return Err(e.into()),
    };
    let (grouped, report) = install_groups(&g, &rules)?;
    write_json(
        &a.out,
        &RulesDoc {
            schema_version: SCHEMA_VERSION,
            delta_f: a.delta_f,
            rules: &rules,
            installed: &report.installed,
            skipped: &report.skipped,
        },
    )?;
    let graph_out = a.graph_out.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".graph.json");
        PathBuf::from(p)
    });
    grouped.save(&graph_out)?;
    print_json(&serde_json::json!({
        "paths": corpus.paths.len(),
        "rules": rules.len(),
        "installed": report.installed.len(),
        "graph_out": graph_out.display().to_string(),
    }));
    Ok(())
}

/// (train, eval) with the last `eval` tasks held out; a third by default.
fn split_tasks(env: &SynthEnv, eval: Option<usize>) -> (Vec<Task>, Vec<Task>) {
    let n = env.tasks.len();
    let e = eval.unwrap_or(n / 3).min(n.saturating_sub(1));
    let (train, held) = env.tasks.split_at(n - e);
    (train.to_vec(), held.to_vec())
}

fn load_space(env: &SynthEnv, graph: Option<&Path>) -> Result<PlanningSpace, CliError> {
    let graph = match graph {
        Some(p) => KnowledgeGraph::load(p)?,
        None => env.truth.clone(),
    };
    Ok(PlanningSpace {
        graph: Arc::new(graph),
        root: env.root.clone(),
        horizon: env.horizon,
    })
}

/// Preference pairs from the reference paths of `tasks` that lie in `g`.
fn expert_pairs(
    tasks: &[Task],
    g: &KnowledgeGraph,
    seed: u64,
) -> Result<Vec<PreferencePair>, CliError> {
    let expert: Vec<_> = tasks
        .iter()
        .filter(|t| {
            t.optimal
                .actions
                .iter()
                .zip(&t.optimal.states[1..])
                .all(|(a, s)| g.successor(a) == Some(s.as_str()))
        })
        .map(|t| (t.instruction.clone(), t.optimal.clone()))
        .collect();
    Ok(build_preference_pairs(&expert, g, seed)?)
}

fn check_shape(shape: &ModelShape) -> Result<(), CliError> {
    if shape.width == 0 || shape.dim == 0 {
        return Err(CliError::Invalid("width and dim must be positive".into()));
    }
    Ok(())
}

fn init(a: InitTrainArgs) -> Result<(), CliError> {
    check_shape(&a.shape)?;
    let pairs: Vec<PreferencePair> = match (&a.pairs, &a.env) {
        (Some(p), _) => read_jsonl(p)?,
        (None, Some(e)) => {
            let env = SynthEnv::load(e)?;
            let space = load_space(&env, a.graph.as_deref())?;
            let (train, _) = split_tasks(&env, a.eval);
            expert_pairs(&train, &space.graph, a.seed)?
        }
        (None, None) => unreachable!("clap requires one of --pairs and --env"),
    };
    if let Some(p) = &a.pairs_out {
        write_jsonl(p, &pairs)?;
    }
    let encoder = FeatureEncoder {
        dim: a.shape.dim,
        ..FeatureEncoder::default()
    };
    let mut model = QScorer::random(encoder, a.shape.width, a.seed);
    let trace = init_train(
        &mut model,
        &pairs,
        &TrainConfig {
            epochs: a.epochs,
            lr: a.lr,
            seed: a.seed,
        },
    )?;
    model.save(&a.out)?;
    print_json(&serde_json::json!({ "pairs": pairs.len(), "loss": trace }));
    Ok(())
}

fn refine(a: RefineTrainArgs) -> Result<(), CliError> {
    let mut model = QScorer::load(&a.model)?;
    let samples: Vec<TrainSample> = read_jsonl(&a.samples)?;
    let trace = refine_train(
        &mut model,
        &samples,
        &TrainConfig {
            epochs: a.epochs,
            lr: a.lr,
            seed: a.seed,
        },
    )?;
    model.save(&a.out)?;
    print_json(&serde_json::json!({ "samples": samples.len(), "loss": trace }));
    Ok(())
}

fn self_train(a: SelfTrainArgs) -> Result<(), CliError> {
    check_shape(&a.shape)?;
    let env = SynthEnv::load(&a.env)?;
    let space = load_space(&env, a.graph.as_deref())?;
    let (train, eval) = split_tasks(&env, a.eval);
    let eval = if eval.is_empty() { train.clone() } else { eval };
    let mut model = match &a.model {
        Some(p) => QScorer::load(p)?,
        None => {
            let encoder = FeatureEncoder {
                dim: a.shape.dim,
                ..FeatureEncoder::default()
            };
            let mut m = QScorer::random(encoder, a.shape.width, a.seed);
            let pairs = expert_pairs(&train, &space.graph, a.seed)?;
            if !pairs.is_empty() {
                init_train(
                    &mut m,
                    &pairs,
                    &TrainConfig {
                        epochs: a.epochs,
                        lr: a.lr,
                        seed: a.seed,
                    },
                )?;
            }
            m
        }
    };
    let cfg = PipelineConfig {
        rounds: a.rounds,
        batch: a.batch,
        mcts: a.search.config(a.seed),
        train: TrainConfig {
            epochs: a.epochs,
            lr: a.lr,
            seed: a.seed,
        },
        seed: a.seed,
    };
    if cfg.rounds == 0 {
        return Err(CliError::Invalid("rounds must be at least 1".into()));
    }
    fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::Io(format!("i/o error on {}: {e}", a.out_dir.display())))?;
    let mut reports: Vec<RoundReport> = Vec::new();
    for r in 1..=cfg.rounds {
        let (report, samples) = run_round(&mut model, &space, &train, &eval, &cfg, r)?;
        model.save(&a.out_dir.join(format!("model_round{r}.json")))?;
        write_jsonl(&a.out_dir.join(format!("samples_round{r}.jsonl")), &samples)?;
        reports.push(report);
    }
    let csv_path = a.out_dir.join("rounds.csv");
    let file = fs::File::create(&csv_path)
        .map_err(|e| CliError::Io(format!("i/o error on {}: {e}", csv_path.display())))?;
    write_round_csv(file, &reports)?;
    model.save(&a.out_dir.join("model.json"))?;
    for r in &reports {
        print_json(&serde_json::json!({
            "round": r.round,
            "loss": r.loss.last(),
            "success_rate": r.success_rate,
            "margin": r.margin,
            "samples": r.samples,
        }));
    }
    Ok(())
}

#[derive(Serialize)]
struct PlanRecord {
    rank: usize,
    actions: Vec<String>,
    states: Vec<String>,
    node_q: Vec<f64>,
    mean_q: f64,
    visits: u64,
    reward: f64,
}

#[derive(Serialize)]
struct PlansDoc {
    schema_version: u32,
    task: String,
    strategy: String,
    success: f64,
    plans: Vec<PlanRecord>,
}

fn extract_cmd(a: ExtractArgs) -> Result<(), CliError> {
    let env = SynthEnv::load(&a.env)?;
    let task = env.task(&a.task)?.clone();
    let space = load_space(&env, a.graph.as_deref())?;
    let m: KgMdp = space.mdp(&task)?;
    let qf: Box<dyn QFunction> = match (&a.model, a.noise) {
        (Some(p), _) => Box::new(QScorer::load(p)?),
        (None, Some(eps)) => {
            if !(0.0..=1.0).contains(&eps) {
                return Err(CliError::Invalid("noise must lie in [0, 1]".into()));
            }
            Box::new(NoisyOracle {
                eps,
                mode: NoiseMode::Random { seed: a.seed },
            })
        }
        (None, None) => Box::new(ExactOracle),
    };
    let plans = extract(&m, qf.as_ref(), a.strategy, &a.search.config(a.seed))?;
    let doc = PlansDoc {
        schema_version: SCHEMA_VERSION,
        task: task.id.clone(),
        strategy: a.strategy.to_string(),
        success: top1_success(&m, &plans),
        plans: plans
            .iter()
            .enumerate()
            .map(|(i, p)| PlanRecord {
                rank: i + 1,
                actions: p.path.actions.clone(),
                states: p.path.states.clone(),
                node_q: p.node_q.clone(),
                mean_q: p.mean_q,
                visits: p.visits,
                reward: m.path_reward(&p.path),
            })
            .collect(),
    };
    write_json(&a.out, &doc)?;
    print_json(
        &serde_json::json!({ "task": doc.task, "plans": doc.plans.len(), "success": doc.success }),
    );
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<(), CliError> {
    let g = KnowledgeGraph::load(&a.graph)?;
    let report = verify_graph(
        Arc::new(g),
        &VerifyConfig {
            instances: a.instances,
            rollouts: a.rollouts,
            delta: a.delta,
            seed: a.seed,
            ..VerifyConfig::default()
        },
    )
    .map_err(|e| match e {
        MdpError::InvalidParameter(m) => CliError::Invalid(m),
        e => e.into(),
    })?;
    let file = fs::File::create(&a.out)
        .map_err(|e| CliError::Io(format!("i/o error on {}: {e}", a.out.display())))?;
    write_verify_csv(file, &report)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    let status = if report.passed { "PASS" } else { "FAIL" };
    println!(
        "greedy optimality: {}/{} instances",
        report.checks.len() - report.greedy_failures,
        report.checks.len()
    );
    println!(
        "rollout agreement (radius {:.4}): {}/{} pairs, {} misses allowed",
        report.bound,
        report.checks.len() - report.rollout_failures,
        report.checks.len(),
        report.rollout_failures_allowed
    );
    println!("{status}");
    if report.passed {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(format!(
            "{} greedy and {} rollout failures",
            report.greedy_failures, report.rollout_failures
        )))
    }
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let qf = match a.qf.as_str() {
        "exact" => QfSpec::Exact,
        "noisy" => QfSpec::Noisy { eps: a.eps },
        "model" => QfSpec::Model {
            width: a.model_width,
            epochs: a.model_epochs,
        },
        other => {
            return Err(CliError::Invalid(format!(
                "unknown qf `{other}` (expected exact, noisy or model)"
            )))
        }
    };
    let spec = BenchSpec {
        axis: a.axis,
        values: if a.values.is_empty() {
            a.axis.default_values()
        } else {
            a.values
        },
        instances: a.instances,
        seeds: a.seeds,
        env: SynthEnvConfig {
            branching: a.k,
            depth: a.depth,
            goal_count: a.goals,
            dag_merge_prob: a.merge_prob,
            chain_prob: a.chain_prob,
            max_level_width: a.max_level_width,
            seed: a.env_seed,
            ..SynthEnvConfig::default()
        },
        qf,
        mcts: a.search.config(0),
        strategy: a.strategy,
    };
    let rows = run_bench(&spec)?;
    let file = fs::File::create(&a.out)
        .map_err(|e| CliError::Io(format!("i/o error on {}: {e}", a.out.display())))?;
    write_bench_csv(file, &rows)?;
    let summary = summarize(&rows);
    if let Some(p) = &a.summary {
        let f = fs::File::create(p)
            .map_err(|e| CliError::Io(format!("i/o error on {}: {e}", p.display())))?;
        let mut w = csv::Writer::from_writer(f);
        for s in &summary {
            w.serialize(s)?;
        }
        w.flush().map_err(csv::Error::from)?;
    }
    println!(
        "{:<12} {:>6} {:>9} {:>9} {:>9} {:>11}",
        "value", "cells", "success", "std", "margin", "latency_ms"
    );
    for s in &summary {
        println!(
            "{:<12} {:>6} {:>9.3} {:>9.3} {:>9.4} {:>11.2}",
            s.value, s.cells, s.mean_success, s.std_success, s.mean_margin, s.mean_latency_ms
        );
    }
    Ok(())
}
