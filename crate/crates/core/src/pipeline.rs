//! Self-training: MCTS with the current model builds search trees, their
//! Bellman targets refine the model, and each round is scored on held-out
//! tasks.

use crate::hashing::derive_seed;
use crate::kg::KnowledgeGraph;
use crate::mcts::{
    bellman_samples, extract, run_mcts, top1_success, MctsConfig, MctsError, QFunction, Strategy,
};
use crate::mdp::{KgMdp, MdpError, Path};
use crate::scorer::{score_actions, LossTrace, ScorerError, TrainConfig, TrainSample, TrainableQ};
use crate::sim::Task;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Mcts(#[from] MctsError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Per-round summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based.
    pub round: usize,
    pub loss: LossTrace,
    pub success_rate: f64,
    pub margin: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub rounds: usize,
    pub batch: usize,
    pub mcts: MctsConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rounds: 4,
            batch: 8,
            mcts: MctsConfig::default(),
            train: TrainConfig {
                epochs: 2,
                lr: 0.05,
                seed: 0,
            },
            seed: 0,
        }
    }
}

impl PipelineConfig {
    fn check(&self) -> Result<(), PipelineError> {
        if self.rounds == 0 {
            return Err(PipelineError::Config("rounds must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(PipelineError::EmptyBatch);
        }
        self.mcts.check()?;
        Ok(())
    }
}

/// The graph, root and horizon that every task is planned on.
#[derive(Clone, Debug)]
pub struct PlanningSpace {
    pub graph: Arc<KnowledgeGraph>,
    pub root: String,
    pub horizon: usize,
}

impl PlanningSpace {
    pub fn mdp(&self, task: &Task) -> Result<KgMdp, MdpError> {
        KgMdp::with_goals(
            self.graph.clone(),
            task.instruction.clone(),
            task.goals.iter().cloned(),
            self.horizon,
            &self.root,
        )
    }
}

/// Mean over the steps of `tau_star` of score(a*) − max over other actions.
/// Steps with a single available action are skipped; 0 when none remain.
pub fn margin_metric(qf: &dyn QFunction, m: &KgMdp, tau_star: &Path) -> Result<f64, MdpError> {
    m.check_path(tau_star)?;
    let mut history = Vec::new();
    let mut total = 0.0;
    let mut counted = 0usize;
    for (t, a) in tau_star.actions.iter().enumerate() {
        let s = m.state_index(&tau_star.states[t]).expect("checked path");
        let a = m.action_index(a).expect("checked path");
        let scores = score_actions(qf, m, &history, s);
        if scores.len() > 1 {
            let best = scores.iter().find(|x| x.0 == a).expect("available").1;
            let other = scores
                .iter()
                .filter(|x| x.0 != a)
                .map(|x| x.1)
                .fold(f64::NEG_INFINITY, f64::max);
            total += best - other;
            counted += 1;
        }
        history.push(a);
    }
    Ok(if counted == 0 {
        0.0
    } else {
        total / counted as f64
    })
}

/// Success rate and mean margin of `qf` on `tasks`. A task succeeds when
/// the top-1 MCTS plan reaches one of its goals. The margin averages over
/// tasks whose reference path lies in the graph.
pub fn evaluate(
    qf: &dyn QFunction,
    space: &PlanningSpace,
    tasks: &[Task],
    mcts: &MctsConfig,
) -> Result<(f64, f64), PipelineError> {
    if tasks.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut success = 0.0;
    let mut margin = 0.0;
    let mut with_path = 0usize;
    for (i, task) in tasks.iter().enumerate() {
        let m = space.mdp(task)?;
        let cfg = MctsConfig {
            seed: derive_seed(mcts.seed, i as u64),
            ..mcts.clone()
        };
        success += top1_success(&m, &extract(&m, qf, Strategy::Mcts, &cfg)?);
        // an explored graph may miss part of the reference path
        if m.check_path(&task.optimal).is_ok() {
            margin += margin_metric(qf, &m, &task.optimal)?;
            with_path += 1;
        }
    }
    let margin = if with_path == 0 {
        0.0
    } else {
        margin / with_path as f64
    };
    Ok((success / tasks.len() as f64, margin))
}

/// Search trees for every task in `batch` with `qf` guiding, flattened into
/// Bellman-target samples in batch order.
pub fn collect_samples(
    qf: &dyn QFunction,
    space: &PlanningSpace,
    batch: &[&Task],
    mcts: &MctsConfig,
) -> Result<Vec<TrainSample>, PipelineError> {
    let mut out = Vec::new();
    for (i, task) in batch.iter().enumerate() {
        let m = space.mdp(task)?;
        let cfg = MctsConfig {
            seed: derive_seed(mcts.seed, i as u64),
            ..mcts.clone()
        };
        let tree = run_mcts(&m, qf, &cfg)?;
        out.extend(
            bellman_samples(&tree, &m)
                .iter()
                .map(|t| TrainSample::from_target(&space.graph, &task.instruction, t)),
        );
    }
    Ok(out)
}

/// One round: search on a batch drawn without replacement, one refinement
/// pass over the fresh samples, then evaluation on `eval`.
pub fn run_round<M: TrainableQ>(
    model: &mut M,
    space: &PlanningSpace,
    train: &[Task],
    eval: &[Task],
    cfg: &PipelineConfig,
    round: usize,
) -> Result<(RoundReport, Vec<TrainSample>), PipelineError> {
    cfg.check()?;
    if train.is_empty() {
        return Err(PipelineError::EmptyBatch);
    }
    let round_seed = derive_seed(cfg.seed, round as u64);
    let mut order: Vec<&Task> = train.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(round_seed));
    order.truncate(cfg.batch);
    let search = MctsConfig {
        seed: derive_seed(round_seed, 1),
        ..cfg.mcts.clone()
    };
    let samples = collect_samples(model, space, &order, &search)?;
    let loss = if cfg.train.epochs == 0 || samples.is_empty() {
        LossTrace::default()
    } else {
        model.refine(
            &samples,
            &TrainConfig {
                seed: derive_seed(round_seed, 2),
                ..cfg.train.clone()
            },
        )?
    };
    let eval_cfg = MctsConfig {
        seed: derive_seed(cfg.seed, 0xe7a1),
        ..cfg.mcts.clone()
    };
    let (success_rate, margin) = evaluate(model, space, eval, &eval_cfg)?;
    log::info!(
        "round {round}: {} samples, loss {:.4}, success {success_rate:.3}, margin {margin:.4}",
        samples.len(),
        loss.last()
    );
    Ok((
        RoundReport {
            round,
            loss,
            success_rate,
            margin,
            samples: samples.len(),
        },
        samples,
    ))
}

/// `cfg.rounds` sequential rounds. `on_round` sees the model after each.
pub fn run_pipeline_with<M: TrainableQ>(
    model: &mut M,
    space: &PlanningSpace,
    train: &[Task],
    eval: &[Task],
    cfg: &PipelineConfig,
    mut on_round: impl FnMut(&M, &RoundReport) -> Result<(), PipelineError>,
) -> Result<Vec<RoundReport>, PipelineError> {
    cfg.check()?;
    let mut reports = Vec::with_capacity(cfg.rounds);
    for r in 1..=cfg.rounds {
        let (report, _) = run_round(model, space, train, eval, cfg, r)?;
        on_round(model, &report)?;
        reports.push(report);
    }
    Ok(reports)
}

pub fn run_pipeline<M: TrainableQ>(
    model: &mut M,
    space: &PlanningSpace,
    train: &[Task],
    eval: &[Task],
    cfg: &PipelineConfig,
) -> Result<Vec<RoundReport>, PipelineError> {
    run_pipeline_with(model, space, train, eval, cfg, |_, _| Ok(()))
}

pub const ROUND_CSV_HEADER: [&str; 5] = ["round", "loss", "success_rate", "margin", "samples"];

pub fn write_round_csv<W: Write>(out: W, reports: &[RoundReport]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROUND_CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.round.to_string(),
            r.loss.last().to_string(),
            r.success_rate.to_string(),
            r.margin.to_string(),
            r.samples.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
