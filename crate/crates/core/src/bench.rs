//! Ablation sweeps over synthetic environments, one CSV row per
//! (axis value, instance, seed) cell.

use crate::groups::{
    install_groups, mine_groups, GroupError, PathCorpus, DEFAULT_DELTA_F, DEFAULT_PATH_CAP,
};
use crate::hashing::derive_seed;
use crate::kg::SCHEMA_VERSION;
use crate::mcts::{
    extract, top1_success, ExactOracle, MctsConfig, MctsError, NoiseMode, NoisyOracle, QFunction,
    Strategy,
};
use crate::mdp::{min_gap, uniform_q, MdpError};
use crate::pipeline::margin_metric;
use crate::scorer::{
    build_preference_pairs, init_train, FeatureEncoder, QScorer, ScorerError, TrainConfig,
};
use crate::sim::{generate_env, SimError, SynthEnv, SynthEnvConfig};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Mcts(#[from] MctsError),
    #[error(transparent)]
    Groups(#[from] GroupError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchAxis {
    Strategy,
    Iterations,
    ExplorationC,
    ModelWidth,
    ActionGroups,
    Bias,
}

impl BenchAxis {
    pub fn name(self) -> &'static str {
        match self {
            BenchAxis::Strategy => "strategy",
            BenchAxis::Iterations => "iterations",
            BenchAxis::ExplorationC => "exploration_c",
            BenchAxis::ModelWidth => "model_width",
            BenchAxis::ActionGroups => "action_groups",
            BenchAxis::Bias => "bias",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            BenchAxis::Strategy => &["greedy", "bon", "mcts"],
            BenchAxis::Iterations => &["10", "30", "50", "100"],
            BenchAxis::ExplorationC => &["0", "5", "10", "20"],
            BenchAxis::ModelWidth => &["8", "32", "128"],
            BenchAxis::ActionGroups => &["off", "on"],
            BenchAxis::Bias => &["0", "0.2", "0.4", "0.6"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

impl FromStr for BenchAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "strategy" => BenchAxis::Strategy,
            "iterations" => BenchAxis::Iterations,
            "exploration_c" => BenchAxis::ExplorationC,
            "model_width" => BenchAxis::ModelWidth,
            "action_groups" => BenchAxis::ActionGroups,
            "bias" => BenchAxis::Bias,
            _ => {
                return Err(format!(
                    "unknown axis `{s}` (expected strategy, iterations, exploration_c, model_width, action_groups or bias)"
                ))
            }
        })
    }
}

/// Value model used in every cell unless the axis replaces it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QfSpec {
    Exact,
    /// Seeded uniform bias of at most `eps`.
    Noisy {
        eps: f64,
    },
    /// A scorer warmed up on the environment's other tasks.
    Model {
        width: usize,
        epochs: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub axis: BenchAxis,
    pub values: Vec<String>,
    pub instances: usize,
    pub seeds: Vec<u64>,
    pub env: SynthEnvConfig,
    pub qf: QfSpec,
    pub mcts: MctsConfig,
    pub strategy: Strategy,
}

impl BenchSpec {
    pub fn new(axis: BenchAxis) -> Self {
        BenchSpec {
            axis,
            values: axis.default_values(),
            instances: 10,
            seeds: vec![0],
            env: SynthEnvConfig::default(),
            qf: QfSpec::Noisy { eps: 0.1 },
            mcts: MctsConfig::default(),
            strategy: Strategy::Mcts,
        }
    }

    fn check(&self) -> Result<(), BenchError> {
        if self.values.is_empty() {
            return Err(BenchError::Spec("axis values are empty".into()));
        }
        if self.instances == 0 {
            return Err(BenchError::Spec("instance count must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(BenchError::Spec("seed list is empty".into()));
        }
        for v in &self.values {
            self.parse_value(v)?;
        }
        Ok(())
    }

    fn parse_value(&self, v: &str) -> Result<AxisValue, BenchError> {
        let bad =
            |what: &str| BenchError::Spec(format!("{} value `{v}`: {what}", self.axis.name()));
        Ok(match self.axis {
            BenchAxis::Strategy => AxisValue::Strategy(v.parse().map_err(|e: String| bad(&e))?),
            BenchAxis::Iterations => AxisValue::Iterations(
                v.parse()
                    .ok()
                    .filter(|&m| m >= 1)
                    .ok_or_else(|| bad("expected an integer ≥ 1"))?,
            ),
            BenchAxis::ExplorationC => AxisValue::Exploration(
                v.parse()
                    .ok()
                    .filter(|c: &f64| *c >= 0.0)
                    .ok_or_else(|| bad("expected c ≥ 0"))?,
            ),
            BenchAxis::ModelWidth => AxisValue::Width(
                v.parse()
                    .ok()
                    .filter(|&w| w >= 1)
                    .ok_or_else(|| bad("expected an integer ≥ 1"))?,
            ),
            BenchAxis::ActionGroups => match v {
                "on" => AxisValue::Groups(true),
                "off" => AxisValue::Groups(false),
                _ => return Err(bad("expected on or off")),
            },
            BenchAxis::Bias => AxisValue::Bias(
                v.parse()
                    .ok()
                    .filter(|b: &f64| *b >= 0.0)
                    .ok_or_else(|| bad("expected a fraction ≥ 0"))?,
            ),
        })
    }
}

#[derive(Clone, Copy, Debug)]
enum AxisValue {
    Strategy(Strategy),
    Iterations(usize),
    Exploration(f64),
    Width(usize),
    Groups(bool),
    /// Adversarial bias as a fraction of the instance's Δ*_min.
    Bias(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub axis: String,
    pub value: String,
    pub instance: usize,
    pub seed: u64,
    pub success: f64,
    pub margin: f64,
    pub latency_ms: f64,
    pub schema_version: u32,
}

pub const BENCH_CSV_HEADER: [&str; 8] = [
    "axis",
    "value",
    "instance",
    "seed",
    "success",
    "margin",
    "latency_ms",
    "schema_version",
];

/// The environment of one instance.
pub fn instance_env(base: &SynthEnvConfig, instance: usize) -> Result<SynthEnv, SimError> {
    generate_env(&SynthEnvConfig {
        seed: derive_seed(base.seed, instance as u64),
        ..base.clone()
    })
}

/// The truth graph with mined groups installed.
pub fn grouped_graph(env: &SynthEnv) -> Result<crate::kg::KnowledgeGraph, GroupError> {
    let corpus = PathCorpus::from_graph(&env.truth, DEFAULT_PATH_CAP);
    let rules = match mine_groups(&corpus, DEFAULT_DELTA_F) {
        Ok(r) => r,
        Err(GroupError::NoPairs) => Vec::new(),
        Err(e) => return Err(e),
    };
    Ok(install_groups(&env.truth, &rules)?.0)
}

fn trained_model(
    env: &SynthEnv,
    width: usize,
    epochs: usize,
    seed: u64,
) -> Result<QScorer, BenchError> {
    let expert: Vec<_> = env.tasks[1..]
        .iter()
        .map(|t| (t.instruction.clone(), t.optimal.clone()))
        .collect();
    let mut model = QScorer::random(FeatureEncoder::default(), width, seed);
    let pairs = build_preference_pairs(&expert, &env.truth, seed)?;
    if !pairs.is_empty() && epochs > 0 {
        init_train(
            &mut model,
            &pairs,
            &TrainConfig {
                epochs,
                lr: 0.05,
                seed,
            },
        )?;
    }
    Ok(model)
}

fn run_cell(
    spec: &BenchSpec,
    value: AxisValue,
    instance: usize,
    seed: u64,
) -> Result<(f64, f64), BenchError> {
    let env = instance_env(&spec.env, instance)?;
    let task = &env.tasks[0];
    let graph = match value {
        AxisValue::Groups(true) => grouped_graph(&env)?,
        _ => env.truth.clone(),
    };
    let m = env.mdp_on(Arc::new(graph), task)?;
    let cell_seed = derive_seed(seed, instance as u64);
    let mut mcts = MctsConfig {
        seed: cell_seed,
        ..spec.mcts.clone()
    };
    let mut strategy = spec.strategy;
    let mut qf_spec = spec.qf.clone();
    let mut bias = None;
    match value {
        AxisValue::Strategy(s) => strategy = s,
        AxisValue::Iterations(n) => mcts.iterations = n,
        AxisValue::Exploration(c) => mcts.exploration = c,
        AxisValue::Width(w) => {
            qf_spec = QfSpec::Model {
                width: w,
                epochs: match spec.qf {
                    QfSpec::Model { epochs, .. } => epochs,
                    _ => 5,
                },
            }
        }
        AxisValue::Bias(b) => bias = Some(b),
        AxisValue::Groups(_) => {}
    }
    let qf: Box<dyn QFunction> = if let Some(frac) = bias {
        let gap = min_gap(&uniform_q(&m), &task.optimal)?.delta_min;
        Box::new(NoisyOracle {
            eps: frac * gap,
            mode: NoiseMode::Adversarial,
        })
    } else {
        match qf_spec {
            QfSpec::Exact => Box::new(ExactOracle),
            QfSpec::Noisy { eps } => Box::new(NoisyOracle {
                eps,
                mode: NoiseMode::Random { seed: cell_seed },
            }),
            QfSpec::Model { width, epochs } => {
                if env.tasks.len() < 2 {
                    return Err(BenchError::Spec("model qf needs goal_count ≥ 2".into()));
                }
                Box::new(trained_model(&env, width, epochs, cell_seed)?)
            }
        }
    };
    let plans = extract(&m, qf.as_ref(), strategy, &mcts)?;
    Ok((
        top1_success(&m, &plans),
        margin_metric(qf.as_ref(), &m, &task.optimal)?,
    ))
}

/// Every cell in (axis value, instance, seed) order.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>, BenchError> {
    spec.check()?;
    let mut rows = Vec::new();
    for v in &spec.values {
        let value = spec.parse_value(v)?;
        for instance in 0..spec.instances {
            for &seed in &spec.seeds {
                let t0 = Instant::now();
                let (success, margin) = run_cell(spec, value, instance, seed)?;
                rows.push(BenchRow {
                    axis: spec.axis.name().to_string(),
                    value: v.clone(),
                    instance,
                    seed,
                    success,
                    margin,
                    latency_ms: t0.elapsed().as_secs_f64() * 1e3,
                    schema_version: SCHEMA_VERSION,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub value: String,
    pub cells: usize,
    pub mean_success: f64,
    pub std_success: f64,
    pub mean_margin: f64,
    pub mean_latency_ms: f64,
}

/// Mean and population standard deviation per axis value, in first-seen
/// order.
pub fn summarize(rows: &[BenchRow]) -> Vec<BenchSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.value.as_str()) {
            order.push(&r.value);
        }
    }
    order
        .into_iter()
        .map(|v| {
            let cell: Vec<&BenchRow> = rows.iter().filter(|r| r.value == v).collect();
            let n = cell.len() as f64;
            let mean = |f: fn(&BenchRow) -> f64| cell.iter().map(|r| f(r)).sum::<f64>() / n;
            let mean_success = mean(|r| r.success);
            let var = cell
                .iter()
                .map(|r| (r.success - mean_success).powi(2))
                .sum::<f64>()
                / n;
            BenchSummary {
                value: v.to_string(),
                cells: cell.len(),
                mean_success,
                std_success: var.sqrt(),
                mean_margin: mean(|r| r.margin),
                mean_latency_ms: mean(|r| r.latency_ms),
            }
        })
        .collect()
}

pub fn write_bench_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<(), BenchError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(BENCH_CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
